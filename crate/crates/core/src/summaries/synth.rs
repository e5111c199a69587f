//! Deterministic offline summaries in the four-block generation format.
//!
//! This is a test double for an LLM: it names the strongest genres as liked,
//! the weakest as disliked, and weaves in theme phrases. Sentiment is always
//! carried by the verb right before the genre (`loves drama`, `dislikes
//! horror`) so that swapping two genre names really inverts the profile.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{ItemType, SummarySource, UserSummary};
use crate::models::GenreProfile;
use crate::util::rng;
use crate::{Result, TearsError};

pub struct SynthesisInput<'a> {
    pub vocab: &'a [String],
    pub genre_prefs: &'a GenreProfile,
    pub liked_themes: &'a [String],
    pub disliked_themes: &'a [String],
    pub item_type: ItemType,
}

const MIN_WORDS: usize = 150;
const MAX_WORDS: usize = 220;

const FAVORITE: &[&str] = &[
    "The user loves {g} {p} and gravitates toward {g} stories whenever possible.",
    "The user clearly loves {g} {p}, with {g} titles forming the core of their taste.",
    "Above all, the user loves {g} {p} and returns to {g} stories again and again.",
];
const SECOND: &[&str] = &[
    "They also enjoy {g} {p} and often favor a good {g} story.",
    "They enjoy {g} {p} as well, and a strong {g} story rarely disappoints them.",
];
const THIRD: &[&str] = &[
    "Now and then they enjoy {g} titles too.",
    "They also favor {g} titles from time to time.",
];
const LIKED_THEMES: &[&str] = &[
    "In terms of plot points, they seem to enjoy stories about {a} and {b}.",
    "They are drawn to narratives involving {a}, and plots about {b} keep them engaged.",
];
const LIKED_THEME_EXTRA: &[&str] = &[
    "Stories that feature {a} also appeal to them.",
    "A plot built around {a} is another reliable draw.",
];
const LEAST: &[&str] = &[
    "The user dislikes {g} {p} and usually avoids {g} stories.",
    "On the other hand, the user dislikes {g} {p} and tends to skip {g} titles.",
];
const LEAST_SECOND: &[&str] = &[
    "They are also lukewarm on {g} {p}.",
    "Most {g} titles leave them cold as well.",
];
const DISLIKED_THEMES: &[&str] = &[
    "Plots centered on {a} do not appeal to them, although other {v} may appreciate such stories.",
    "They show little patience for plots about {a}, even though other {v} often seek them out.",
];
const FILLER_LIKED: &[&str] = &[
    "They appreciate character-driven arcs with clear stakes and satisfying payoffs.",
    "Emotional depth and memorable characters matter a great deal to them.",
    "They respond well to tight pacing and a story that builds toward a strong finale.",
    "Clever twists and well-earned reveals tend to keep their attention.",
    "They value atmosphere and a sense of place that pulls them into the story.",
    "Relationships that change over the course of the story are a recurring highlight for them.",
];
const FILLER_DISLIKED: &[&str] = &[
    "Slow stretches without clear direction tend to lose their interest.",
    "They are put off by predictable formulas and thinly written characters.",
    "Heavy exposition and meandering subplots rarely work for them.",
    "Stories that rely on shock value over substance leave them unimpressed.",
    "Endings that feel rushed or unearned are a common complaint.",
    "They lose patience with repetitive conflicts that never move forward.",
];

fn fill(template: &str, g: &str, p: &str) -> String {
    template.replace("{g}", g).replace("{p}", p)
}

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Ranks genres by weight; ties resolve to the lower vocabulary index.
fn ranked(prefs: &GenreProfile) -> Vec<usize> {
    let w = prefs.weights();
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    idx
}

/// Four-block `Summary:` text, 150 to 220 words, deterministic in `seed`.
pub fn synthesize_offline(user: &str, input: &SynthesisInput<'_>, seed: u64) -> Result<UserSummary> {
    let vocab = input.vocab;
    if vocab.is_empty() {
        return Err(TearsError::invalid("offline synthesis needs a non-empty genre vocabulary"));
    }
    if input.genre_prefs.len() != vocab.len() {
        return Err(TearsError::DimensionMismatch {
            expected: vocab.len(),
            got: input.genre_prefs.len(),
        });
    }
    let mut r = rng(seed);
    let p = input.item_type.plural();
    let name = |g: usize| vocab[g].to_lowercase();
    let order = ranked(input.genre_prefs);
    let w = input.genre_prefs.weights();
    let uniform = 1.0 / vocab.len() as f64;
    let n_liked = order.iter().take(3).filter(|&&g| w[g] >= uniform).count().max(1);
    let liked = &order[..n_liked.min(order.len())];
    let disliked: Vec<usize> = order
        .iter()
        .rev()
        .filter(|g| !liked.contains(g))
        .take(2)
        .copied()
        .collect();

    let pick = |r: &mut rand_chacha::ChaCha8Rng, bank: &[&'static str]| -> &'static str {
        bank.choose(r).copied().expect("non-empty bank")
    };

    let mut b1 = vec![fill(pick(&mut r, FAVORITE), &name(liked[0]), p)];
    if let Some(&g) = liked.get(1) {
        b1.push(fill(pick(&mut r, SECOND), &name(g), p));
    }
    if let Some(&g) = liked.get(2) {
        b1.push(fill(pick(&mut r, THIRD), &name(g), p));
    }

    let mut b2 = Vec::new();
    let themes = input.liked_themes;
    if themes.len() >= 2 {
        b2.push(pick(&mut r, LIKED_THEMES).replace("{a}", &themes[0]).replace("{b}", &themes[1]));
        for t in themes.iter().skip(2).take(2) {
            b2.push(pick(&mut r, LIKED_THEME_EXTRA).replace("{a}", t));
        }
    } else if let Some(t) = themes.first() {
        b2.push(pick(&mut r, LIKED_THEME_EXTRA).replace("{a}", t));
    }

    let mut b3 = Vec::new();
    if let Some(&g) = disliked.first() {
        b3.push(fill(pick(&mut r, LEAST), &name(g), p));
    }
    if let Some(&g) = disliked.get(1) {
        b3.push(fill(pick(&mut r, LEAST_SECOND), &name(g), p));
    }

    let audience = match input.item_type {
        ItemType::Movie => "viewers",
        ItemType::Book => "readers",
    };
    let mut b4 = Vec::new();
    for t in input.disliked_themes.iter().take(2) {
        b4.push(pick(&mut r, DISLIKED_THEMES).replace("{a}", t).replace("{v}", audience));
    }

    let mut liked_fill: Vec<&str> = FILLER_LIKED.to_vec();
    let mut disliked_fill: Vec<&str> = FILLER_DISLIKED.to_vec();
    use rand::seq::SliceRandom;
    liked_fill.shuffle(&mut r);
    disliked_fill.shuffle(&mut r);
    let count = |bs: [&Vec<String>; 4]| bs.iter().flat_map(|b| b.iter()).map(|s| words(s)).sum::<usize>() + 1;
    let mut turn = r.random::<bool>();
    while count([&b1, &b2, &b3, &b4]) < MIN_WORDS && !(liked_fill.is_empty() && disliked_fill.is_empty()) {
        let use_liked = (turn && !liked_fill.is_empty()) || disliked_fill.is_empty();
        let bank = if use_liked { &mut liked_fill } else { &mut disliked_fill };
        let s = bank.pop().expect("checked non-empty");
        if count([&b1, &b2, &b3, &b4]) + words(s) > MAX_WORDS {
            break;
        }
        if use_liked { &mut b2 } else { &mut b4 }.push(s.to_string());
        turn = !turn;
    }
    if b4.is_empty() {
        b4.push(format!(
            "Plots built on tired formulas do not appeal to them, although other {audience} may appreciate such stories."
        ));
    }
    if b2.is_empty() {
        b2.push(FILLER_LIKED[0].to_string());
    }

    let text = format!(
        "Summary:\n\n{}\n\n{}\n\n{}\n\n{}",
        b1.join(" "),
        b2.join(" "),
        if b3.is_empty() { "The user has no strongly disliked genres.".to_string() } else { b3.join(" ") },
        b4.join(" ")
    );
    UserSummary::new(user, text, SummarySource::Synthetic, seed)
}

/// Checks the `Summary:` header followed by exactly four non-empty blocks.
pub fn validate_four_block(text: &str) -> Result<()> {
    let body = text
        .trim_start()
        .strip_prefix("Summary:")
        .ok_or_else(|| TearsError::invalid("summary must start with \"Summary:\""))?;
    let blocks: Vec<&str> = body.split("\n\n").map(str::trim).filter(|b| !b.is_empty()).collect();
    if blocks.len() != 4 {
        return Err(TearsError::invalid(format!("expected 4 blocks, found {}", blocks.len())));
    }
    Ok(())
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

/// Whole-word, case-insensitive occurrences of `needle` as byte ranges.
pub(crate) fn find_word(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    let hay = haystack.to_ascii_lowercase();
    let pat = needle.to_ascii_lowercase();
    let mut out = Vec::new();
    if pat.is_empty() {
        return out;
    }
    let hb = hay.as_bytes();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&pat) {
        let s = from + pos;
        let e = s + pat.len();
        let left_ok = s == 0 || !is_word_byte(hb[s - 1]);
        let right_ok = e == hb.len() || !is_word_byte(hb[e]);
        if left_ok && right_ok {
            out.push((s, e));
        }
        from = s + 1;
        while from < hay.len() && !hay.is_char_boundary(from) {
            from += 1;
        }
    }
    out
}

fn match_case(original: &str, replacement: &str) -> String {
    if original.chars().next().is_some_and(char::is_uppercase) {
        let mut c = replacement.chars();
        match c.next() {
            Some(f) => f.to_uppercase().chain(c).collect(),
            None => String::new(),
        }
    } else {
        replacement.to_lowercase()
    }
}

/// Swaps every whole-word occurrence of two genre names, keeping the
/// capitalization of each occurrence's first letter.
pub fn flip_genres_in_text(text: &str, a: &str, b: &str) -> String {
    let mut hits: Vec<(usize, usize, &str)> = find_word(text, a)
        .into_iter()
        .map(|(s, e)| (s, e, b))
        .chain(find_word(text, b).into_iter().map(|(s, e)| (s, e, a)))
        .collect();
    hits.sort_by_key(|h| h.0);
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (s, e, rep) in hits {
        if s < last {
            continue;
        }
        out.push_str(&text[last..s]);
        out.push_str(&match_case(&text[s..e], rep));
        last = e;
    }
    out.push_str(&text[last..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vec<String> {
        ["Action", "Comedy", "Drama", "Horror", "Romance"].iter().map(|s| s.to_string()).collect()
    }

    fn prefs(w: &[f64]) -> GenreProfile {
        GenreProfile::from_weights(w.to_vec()).unwrap()
    }

    fn synth(seed: u64, p: &GenreProfile) -> UserSummary {
        let v = vocab();
        let liked = vec!["heist".to_string(), "vault".to_string(), "dragon".to_string()];
        let dis = vec!["zombie".to_string()];
        synthesize_offline(
            "u1",
            &SynthesisInput {
                vocab: &v,
                genre_prefs: p,
                liked_themes: &liked,
                disliked_themes: &dis,
                item_type: ItemType::Movie,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn peaked_profile_names_favorite_first() {
        let s = synth(1, &prefs(&[0.7, 0.1, 0.1, 0.05, 0.05]));
        validate_four_block(&s.text).unwrap();
        let first_block = s.text.split("\n\n").nth(1).unwrap();
        let first_genre = vocab()
            .iter()
            .filter_map(|g| find_word(first_block, g).first().map(|h| (h.0, g.clone())))
            .min()
            .unwrap();
        assert_eq!(first_genre.1, "Action");
        assert!(s.text.contains("loves action"));
        assert_eq!(s.source, SummarySource::Synthetic);
    }

    #[test]
    fn deterministic_in_seed() {
        let p = prefs(&[0.4, 0.3, 0.2, 0.05, 0.05]);
        assert_eq!(synth(5, &p).text, synth(5, &p).text);
    }

    #[test]
    fn seed_changes_phrasing_not_genres() {
        let p = prefs(&[0.4, 0.3, 0.2, 0.07, 0.03]);
        let (a, b) = (synth(1, &p), synth(2, &p));
        assert_ne!(a.text, b.text);
        for g in vocab() {
            assert_eq!(find_word(&a.text, &g).is_empty(), find_word(&b.text, &g).is_empty(), "{g}");
        }
    }

    #[test]
    fn length_within_band() {
        for seed in 0..50 {
            let s = synth(seed, &prefs(&[0.2; 5]));
            let n = s.word_count();
            assert!((150..=220).contains(&n), "seed {seed}: {n} words");
            validate_four_block(&s.text).unwrap();
        }
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let p = prefs(&[1.0]);
        let r = synthesize_offline(
            "u",
            &SynthesisInput {
                vocab: &[],
                genre_prefs: &p,
                liked_themes: &[],
                disliked_themes: &[],
                item_type: ItemType::Movie,
            },
            0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn validator_rejects_other_shapes() {
        assert!(validate_four_block("no header").is_err());
        assert!(validate_four_block("Summary:\n\na\n\nb").is_err());
        assert!(validate_four_block("Summary:\n\na\n\nb\n\nc\n\nd").is_ok());
    }

    #[test]
    fn flip_swaps_whole_words_preserving_case() {
        let t = "Drama lovers love drama; dramatic horror. Horror!";
        assert_eq!(flip_genres_in_text(t, "drama", "horror"), "Horror lovers love horror; dramatic drama. Drama!");
        let sf = flip_genres_in_text("loves sci-fi, avoids western", "Sci-Fi", "Western");
        assert_eq!(sf, "loves western, avoids sci-fi");
    }
}
