//! Word handling shared by the world generator and the featurizer.

/// Lowercased alphanumeric words of `s`.
pub fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Salted FNV-1a over the lowercased word.
pub fn hash_word(salt: u64, word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in word.to_lowercase().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche so nearby salts spread across buckets
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

pub fn bucket(salt: u64, word: &str, buckets: usize) -> usize {
    (hash_word(salt, word) % buckets as u64) as usize
}

/// Hash of a label mapped to `[-1, 1)`.
pub fn label_code(salt: u64, label: &str) -> f64 {
    (hash_word(salt ^ 0x5bd1_e995, label) >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

pub const LEXICON: [&str; 12] = [
    "alice", "bob", "lunch", "report", "budget", "paris", "tokyo", "garden", "piano", "coffee",
    "winter", "ticket",
];

pub const CATEGORIES: [&str; 12] = [
    "system", "audio", "files", "maps", "notes", "clock", "contacts", "camera", "calendar", "mail",
    "weather", "shop",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable consonant-vowel word with `syllables` syllables, first letter uppercase.
pub fn synth_word<R: rand::Rng>(rng: &mut R, syllables: usize) -> String {
    let mut s = String::with_capacity(syllables * 2);
    for i in 0..syllables {
        let c = CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char;
        let v = VOWELS[rng.gen_range(0..VOWELS.len())] as char;
        s.push(if i == 0 { c.to_ascii_uppercase() } else { c });
        s.push(v);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_lowercase_and_split() {
        assert_eq!(words("Turn on Wifi, in Vexo!"), ["turn", "on", "wifi", "in", "vexo"]);
    }

    #[test]
    fn hashing_is_salted_and_case_insensitive() {
        assert_eq!(hash_word(1, "Kalomi"), hash_word(1, "kalomi"));
        assert_ne!(hash_word(1, "kalomi"), hash_word(2, "kalomi"));
        let c = label_code(7, "kalomi");
        assert!((-1.0..1.0).contains(&c));
    }
}
