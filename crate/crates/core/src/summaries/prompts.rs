//! Prompt templates and builders. Templates are versioned text assets; every
//! `{name}` placeholder must be supplied at render time.

use serde::{Deserialize, Serialize};

use super::{ItemType, UserSummary};
use crate::{Result, TearsError};

pub const TEMPLATE_VERSION: &str = "v1";

const GENERATION_MOVIE: &str = include_str!("../../assets/prompts/generation_movie.v1.txt");
const GENERATION_BOOK: &str = include_str!("../../assets/prompts/generation_book.v1.txt");
const FLIP_IDENTIFY_SYSTEM: &str = include_str!("../../assets/prompts/flip_identify_system.v1.txt");
const FLIP_IDENTIFY_USER: &str = include_str!("../../assets/prompts/flip_identify_user.v1.txt");
const FLIP_EDIT: &str = include_str!("../../assets/prompts/flip_edit.v1.txt");
const FINEGRAINED_THEMES: &str = include_str!("../../assets/prompts/finegrained_themes.v1.txt");
const FINEGRAINED_EDIT: &str = include_str!("../../assets/prompts/finegrained_edit.v1.txt");
const FEWSHOT_RECOMMEND: &str = include_str!("../../assets/prompts/fewshot_recommend.v1.txt");

/// A system message plus user turns sent one after another, each answered
/// before the next is sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user_turns: Vec<String>,
    pub expected_format: String,
}

impl PromptBundle {
    pub fn all_text(&self) -> String {
        let mut s = self.system.clone();
        for t in &self.user_turns {
            s.push('\n');
            s.push_str(t);
        }
        s
    }
}

/// One history line: `{title}, {rating}, {genre}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub title: String,
    pub rating: u8,
    /// `|`-joined genre names.
    pub genres: String,
}

/// Names of `{placeholder}` tokens: lowercase ASCII letters and underscores.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let rest = &text[i + 1..];
            let len = rest
                .bytes()
                .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
                .count();
            if len > 0 && rest.as_bytes().get(len) == Some(&b'}') {
                out.push(rest[..len].to_string());
                i += len + 2;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Substitutes every placeholder in a single pass, so substituted values are
/// never re-scanned. Missing values are an error.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let len = after
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        if len > 0 && after.as_bytes().get(len) == Some(&b'}') {
            let name = &after[..len];
            let v = values
                .iter()
                .find(|(k, _)| *k == name)
                .ok_or_else(|| TearsError::invalid(format!("template placeholder {{{name}}} has no value")))?;
            out.push_str(v.1);
            rest = &after[len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// The summary-generation prompt over the `budget` oldest history entries
/// (the history is assumed oldest first).
pub fn build_generation_prompt(history: &[HistoryEntry], item_type: ItemType, budget: usize) -> Result<PromptBundle> {
    if history.is_empty() {
        return Err(TearsError::invalid("generation prompt needs a non-empty history"));
    }
    let lines: Vec<String> = history
        .iter()
        .take(budget.max(1))
        .map(|h| format!("{}, {}, {}", h.title, h.rating, h.genres))
        .collect();
    let template = match item_type {
        ItemType::Movie => GENERATION_MOVIE,
        ItemType::Book => GENERATION_BOOK,
    };
    let text = render(template.trim_end(), &[("history", &lines.join("\n"))])?;
    Ok(PromptBundle {
        system: String::new(),
        user_turns: vec![text],
        expected_format: "Summary: followed by four blocks (liked genres, liked plot points, disliked genres, disliked plot points), about 200 words".into(),
    })
}

/// The two-step genre flip: identification first, then a rewrite whose
/// prompt depends on the identified genres.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipPromptPlan {
    pub identification: PromptBundle,
}

impl FlipPromptPlan {
    /// The full two-turn bundle once the favorite and least favorite genres
    /// are known.
    pub fn with_edit(&self, favorite: &str, least_favorite: &str) -> Result<PromptBundle> {
        let edit = render(
            FLIP_EDIT.trim_end(),
            &[("favorite_genre", favorite), ("least_favorite_genre", least_favorite)],
        )?;
        let mut b = self.identification.clone();
        b.user_turns.push(edit);
        b.expected_format = "a full rewritten summary with the same format and length".into();
        Ok(b)
    }
}

pub fn build_flip_prompts(summary: &UserSummary, genre_vocab: &[String]) -> Result<FlipPromptPlan> {
    if summary.text.trim().is_empty() {
        return Err(TearsError::invalid("flip prompts need a non-empty summary"));
    }
    let system = render(FLIP_IDENTIFY_SYSTEM.trim_end(), &[("genre_set", &genre_vocab.join(", "))])?;
    let user = render(FLIP_IDENTIFY_USER.trim_end(), &[("user_summary", &summary.text)])?;
    Ok(FlipPromptPlan {
        identification: PromptBundle {
            system,
            user_turns: vec![user],
            expected_format: "Favorite: [genre]\nLeast Favorite: [genre]".into(),
        },
    })
}

/// Extracts `(favorite, least favorite)` from an identification reply,
/// matching names case-insensitively against the vocabulary.
pub fn parse_flip_identification(reply: &str, genre_vocab: &[String]) -> Result<(String, String)> {
    let mut fav = None;
    let mut least = None;
    for line in reply.lines() {
        let l = line.trim().trim_start_matches(['*', '-', ' ']);
        let Some((key, rest)) = l.split_once(':') else { continue };
        let key = key.trim().trim_matches('*').to_ascii_lowercase();
        let v = rest.trim().trim_matches(['[', ']', '*', ' ', '.']);
        let genre = genre_vocab.iter().find(|g| g.eq_ignore_ascii_case(v)).cloned();
        match key.as_str() {
            "least favorite" | "least favourite" => least = genre,
            "favorite" | "favourite" => fav = genre,
            _ => {}
        }
    }
    match (fav, least) {
        (Some(f), Some(l)) => Ok((f, l)),
        _ => Err(TearsError::invalid(format!("could not parse genre identification from {reply:?}"))),
    }
}

/// The two-turn fine-grained edit: a 5-word theme summary of the target item,
/// then a sentence replacement inside the user summary.
pub fn build_finegrained_prompts(summary: &UserSummary, target_title: &str, item_type: ItemType) -> Result<PromptBundle> {
    if target_title.trim().is_empty() {
        return Err(TearsError::invalid("fine-grained target title is empty"));
    }
    let first = render(
        FINEGRAINED_THEMES.trim_end(),
        &[("item_type", item_type.singular()), ("item", target_title)],
    )?;
    let second = render(FINEGRAINED_EDIT.trim_end(), &[("summary", &summary.text)])?;
    Ok(PromptBundle {
        system: String::new(),
        user_turns: vec![first, second],
        expected_format: "the edited summary only".into(),
    })
}

/// `More {genre} {item_type}` or `Less {genre} {item_type}`.
pub fn guidance_phrase(genre: &str, item_type: ItemType, more: bool) -> String {
    format!("{} {} {}", if more { "More" } else { "Less" }, genre, item_type.plural())
}

/// Few-shot recommendation prompt. Shipped as an asset; no evaluation is run
/// with it.
pub fn build_fewshot_prompt(
    summary: &UserSummary,
    item_type: ItemType,
    catalog_lines: &[String],
    seen_lines: &[String],
) -> Result<PromptBundle> {
    let text = render(
        FEWSHOT_RECOMMEND.trim_end(),
        &[
            ("user_summary", &summary.text),
            ("item_type_plural", item_type.plural()),
            ("catalog", &catalog_lines.join("\n")),
            ("seen", &seen_lines.join("\n")),
        ],
    )?;
    Ok(PromptBundle {
        system: String::new(),
        user_turns: vec![text],
        expected_format: "id1, id2, ... idn".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summaries::SummarySource;
    use proptest::prelude::*;

    fn hist(n: usize) -> Vec<HistoryEntry> {
        (0..n)
            .map(|i| HistoryEntry {
                title: format!("Title {i}"),
                rating: (i % 5 + 1) as u8,
                genres: "Action|Comedy".into(),
            })
            .collect()
    }

    fn summary(text: &str) -> UserSummary {
        UserSummary::new("u", text, SummarySource::Synthetic, 0).unwrap()
    }

    #[test]
    fn generation_respects_budget() {
        let b = build_generation_prompt(&hist(60), ItemType::Movie, 50).unwrap();
        let n = b.user_turns[0].lines().filter(|l| l.starts_with("Title ")).count();
        assert_eq!(n, 50);
        assert!(b.user_turns[0].contains("Title 49, 5, Action|Comedy"));
        assert!(!b.user_turns[0].contains("Title 50,"));
        assert!(b.user_turns[0].contains("about 200 words"));
        assert!(b.user_turns[0].contains("Summary:"));
    }

    #[test]
    fn single_item_history_is_valid() {
        let b = build_generation_prompt(&hist(1), ItemType::Movie, 50).unwrap();
        assert_eq!(b.user_turns[0].lines().filter(|l| l.starts_with("Title ")).count(), 1);
        assert!(build_generation_prompt(&[], ItemType::Movie, 50).is_err());
    }

    #[test]
    fn book_prompt_has_no_movie_wording() {
        let b = build_generation_prompt(&hist(3), ItemType::Book, 50).unwrap();
        let lower = b.user_turns[0].to_lowercase();
        assert!(!lower.contains("movie"));
        assert!(lower.contains("books"));
    }

    #[test]
    fn flip_prompts_interpolate_vocabulary_and_genres() {
        let vocab: Vec<String> = ["Action", "Drama", "Horror"].iter().map(|s| s.to_string()).collect();
        let plan = build_flip_prompts(&summary("The user enjoys drama."), &vocab).unwrap();
        assert!(plan.identification.system.contains("Action, Drama, Horror"));
        assert!(plan.identification.user_turns[0].contains("The user enjoys drama."));
        let full = plan.with_edit("Drama", "Horror").unwrap();
        assert_eq!(full.user_turns.len(), 2);
        assert!(full.user_turns[1].contains("Drama is your least favorite and Horror is your favorite"));
    }

    #[test]
    fn parses_identification_reply() {
        let vocab: Vec<String> = ["Drama", "Horror"].iter().map(|s| s.to_string()).collect();
        let (f, l) = parse_flip_identification("Favorite: Drama\nLeast Favorite: [horror]", &vocab).unwrap();
        assert_eq!((f.as_str(), l.as_str()), ("Drama", "Horror"));
        assert!(parse_flip_identification("no idea", &vocab).is_err());
    }

    #[test]
    fn finegrained_prompts_match_template() {
        let s = summary("Summary: The user loves heists.");
        let b = build_finegrained_prompts(&s, "Vault Heist 12", ItemType::Movie).unwrap();
        assert!(b.user_turns[0].contains("5 words"));
        assert!(b.user_turns[0].contains("summarize the movie"));
        assert!(b.user_turns[1].contains(&s.text));
        let book = build_finegrained_prompts(&s, "A Tale", ItemType::Book).unwrap();
        assert!(book.user_turns[0].contains("summarize the book"));
        assert!(build_finegrained_prompts(&s, " ", ItemType::Movie).is_err());
    }

    #[test]
    fn missing_value_is_an_error() {
        assert!(render("hello {name}", &[]).is_err());
        assert_eq!(render("a {x} b {y}", &[("x", "{y}"), ("y", "2")]).unwrap(), "a {y} b 2");
        assert_eq!(render("{Not} {a-b} {}", &[]).unwrap(), "{Not} {a-b} {}");
    }

    #[test]
    fn fewshot_prompt_renders() {
        let b = build_fewshot_prompt(&summary("likes"), ItemType::Movie, &["1: A".into()], &["2: B".into()]).unwrap();
        assert!(placeholders(&b.user_turns[0]).is_empty());
        assert!(b.user_turns[0].contains("top 100 movies"));
    }

    proptest! {
        #[test]
        fn rendered_prompts_leave_no_placeholders(
            text in "[A-Za-z ,.]{1,200}",
            titles in prop::collection::vec("[A-Za-z0-9][A-Za-z0-9 ]{0,19}", 1..10),
            book in any::<bool>(),
        ) {
            let it = if book { ItemType::Book } else { ItemType::Movie };
            let h: Vec<_> = titles.iter().map(|t| HistoryEntry { title: t.clone(), rating: 4, genres: "Drama".into() }).collect();
            let s = summary(&format!("x {text}"));
            let vocab = vec!["Drama".to_string(), "Horror".to_string()];
            let bundles = vec![
                build_generation_prompt(&h, it, 50).unwrap(),
                build_flip_prompts(&s, &vocab).unwrap().with_edit("Drama", "Horror").unwrap(),
                build_finegrained_prompts(&s, &titles[0], it).unwrap(),
            ];
            for b in bundles {
                prop_assert!(placeholders(&b.all_text()).is_empty());
            }
        }
    }
}
