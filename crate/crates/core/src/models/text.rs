//! Deterministic hashed bag-of-words prompt embedding.

use ndarray::Array1;

pub const TEXT_DIM: usize = 512;

/// Token whose vector stands for "no prompt" (the unconditional input).
pub const NULL_TOKEN: &str = "<null>";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn add_token(acc: &mut Array1<f64>, token: &str) {
    let mut state = fnv1a(token.as_bytes());
    for v in acc.iter_mut() {
        // uniform in [-1, 1)
        *v += (splitmix64(&mut state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
    }
}

fn normalized(mut v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v /= n;
    v
}

/// Lowercased alphanumeric words (hyphens kept) of a prompt.
pub fn tokenize(prompt: &str) -> Vec<String> {
    prompt
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// The unconditional embedding.
pub fn null_embedding() -> Array1<f64> {
    let mut v = Array1::zeros(TEXT_DIM);
    add_token(&mut v, NULL_TOKEN);
    normalized(v)
}

/// Unit-norm 512-d embedding; prompts without words map to [`null_embedding`].
pub fn text_embed(prompt: &str) -> Array1<f64> {
    let tokens = tokenize(prompt);
    if tokens.is_empty() {
        return null_embedding();
    }
    let mut v = Array1::zeros(TEXT_DIM);
    for t in &tokens {
        add_token(&mut v, t);
    }
    for pair in tokens.windows(2) {
        add_token(&mut v, &format!("{} {}", pair[0], pair[1]));
    }
    normalized(v)
}
