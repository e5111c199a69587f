use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split_fields, GenreId, ItemId};
use crate::{Result, TearsError};

/// How a catalog file is laid out: `id<delim>title<delim>genre|genre|...`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogFormat {
    pub delimiter: String,
    pub genre_separator: String,
    pub has_header: bool,
}

impl CatalogFormat {
    /// MovieLens `.dat` layout (`::` fields, `|` genres, no header).
    pub fn movielens() -> Self {
        CatalogFormat {
            delimiter: "::".into(),
            genre_separator: "|".into(),
            has_header: false,
        }
    }

    /// Comma-separated with a header row and quoted titles.
    pub fn csv() -> Self {
        CatalogFormat {
            delimiter: ",".into(),
            genre_separator: "|".into(),
            has_header: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub title: String,
    /// Sorted, deduplicated genre indices.
    pub genres: Vec<GenreId>,
}

/// Items with titles and genre sets over a dense, lexicographically sorted
/// genre vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "CatalogRepr", into = "CatalogRepr")]
pub struct ItemCatalog {
    items: Vec<Item>,
    genre_vocabulary: Vec<String>,
    index: HashMap<ItemId, usize>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    genre_vocabulary: Vec<String>,
    items: Vec<Item>,
}

impl From<CatalogRepr> for ItemCatalog {
    fn from(r: CatalogRepr) -> Self {
        let index = r.items.iter().enumerate().map(|(i, it)| (it.id.clone(), i)).collect();
        ItemCatalog {
            items: r.items,
            genre_vocabulary: r.genre_vocabulary,
            index,
        }
    }
}

impl From<ItemCatalog> for CatalogRepr {
    fn from(c: ItemCatalog) -> Self {
        CatalogRepr {
            genre_vocabulary: c.genre_vocabulary,
            items: c.items,
        }
    }
}

/// The id index is derived from `items`, so equality ignores it.
impl PartialEq for ItemCatalog {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items && self.genre_vocabulary == other.genre_vocabulary
    }
}

impl ItemCatalog {
    /// Builds a catalog from `(id, title, genre names)` rows, in the given order.
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ItemId, String, Vec<String>)>,
    {
        let rows: Vec<_> = rows.into_iter().collect();
        let vocab: BTreeSet<&str> = rows
            .iter()
            .flat_map(|(_, _, g)| g.iter().map(String::as_str))
            .collect();
        let genre_vocabulary: Vec<String> = vocab.into_iter().map(str::to_owned).collect();
        let gidx: HashMap<&str, usize> = genre_vocabulary
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let mut items = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        for (id, title, genres) in &rows {
            if title.trim().is_empty() {
                return Err(TearsError::invalid(format!("item {id} has an empty title")));
            }
            if genres.is_empty() {
                return Err(TearsError::invalid(format!("item {id} has no genres")));
            }
            if index.insert(id.clone(), items.len()).is_some() {
                return Err(TearsError::DuplicateItem(id.clone()));
            }
            let mut g: Vec<usize> = genres.iter().map(|n| gidx[n.as_str()]).collect();
            g.sort_unstable();
            g.dedup();
            items.push(Item {
                id: id.clone(),
                title: title.clone(),
                genres: g,
            });
        }
        Ok(ItemCatalog {
            items,
            genre_vocabulary,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, idx: usize) -> &Item {
        &self.items[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn genre_vocabulary(&self) -> &[String] {
        &self.genre_vocabulary
    }

    pub fn num_genres(&self) -> usize {
        self.genre_vocabulary.len()
    }

    pub fn genre_index(&self, name: &str) -> Option<GenreId> {
        self.genre_vocabulary
            .iter()
            .position(|g| g.eq_ignore_ascii_case(name))
    }

    pub fn genre_name(&self, g: GenreId) -> &str {
        &self.genre_vocabulary[g]
    }

    pub fn has_genre(&self, item: usize, g: GenreId) -> bool {
        self.items[item].genres.binary_search(&g).is_ok()
    }

    /// Genre names of an item joined by `|`.
    pub fn genre_label(&self, item: usize) -> String {
        self.items[item]
            .genres
            .iter()
            .map(|&g| self.genre_vocabulary[g].as_str())
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Genres ordered by number of carrying items, most populous first
    /// (ties by vocabulary order).
    pub fn genres_by_item_count(&self) -> Vec<(GenreId, usize)> {
        let mut counts = vec![0usize; self.num_genres()];
        for it in &self.items {
            for &g in &it.genres {
                counts[g] += 1;
            }
        }
        let mut out: Vec<_> = counts.into_iter().enumerate().collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Keeps only the listed items, in the listed order. The genre vocabulary
    /// is rebuilt so it stays dense.
    pub fn restrict(&self, ids: &[ItemId]) -> Result<ItemCatalog> {
        let rows = ids
            .iter()
            .map(|id| {
                let idx = self.index_of(id).ok_or_else(|| TearsError::UnknownItem(id.clone()))?;
                let it = &self.items[idx];
                let genres = it
                    .genres
                    .iter()
                    .map(|&g| self.genre_vocabulary[g].clone())
                    .collect();
                Ok((it.id.clone(), it.title.clone(), genres))
            })
            .collect::<Result<Vec<_>>>()?;
        ItemCatalog::from_rows(rows)
    }

    /// SHA-256 over the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("catalog serializes");
        crate::util::sha256_hex(&bytes)
    }
}

/// Reads a catalog file. Rows with zero genres are skipped with a warning;
/// malformed rows and duplicate ids are errors.
pub fn load_catalog(path: &Path, format: &CatalogFormat) -> Result<ItemCatalog> {
    let text = fs::read_to_string(path).map_err(|e| TearsError::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, fields) in catalog_records(&text, format)? {
        if fields.len() < 3 {
            return Err(TearsError::Parse {
                line: lineno,
                message: format!("expected id, title, genres; got {} fields", fields.len()),
            });
        }
        // titles may contain the delimiter in unquoted formats; genres are last
        let id = fields[0].trim().to_string();
        let genres_raw = fields[fields.len() - 1].trim();
        let title = fields[1..fields.len() - 1].join(&format.delimiter).trim().to_string();
        if id.is_empty() || title.is_empty() {
            return Err(TearsError::Parse {
                line: lineno,
                message: "empty id or title".into(),
            });
        }
        let genres: Vec<String> = genres_raw
            .split(format.genre_separator.as_str())
            .map(|g| g.trim().to_string())
            .filter(|g| !g.is_empty() && g != "(no genres listed)")
            .collect();
        if genres.is_empty() {
            log::warn!("catalog line {lineno}: item {id} has no genres, row rejected");
            continue;
        }
        rows.push((id, title, genres));
    }
    ItemCatalog::from_rows(rows)
}

fn catalog_records(text: &str, format: &CatalogFormat) -> Result<Vec<(usize, Vec<String>)>> {
    if format.delimiter.len() == 1 {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(format.delimiter.as_bytes()[0])
            .has_headers(format.has_header)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| TearsError::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            out.push((line, rec.iter().map(str::to_owned).collect()));
        }
        Ok(out)
    } else {
        Ok(text
            .lines()
            .enumerate()
            .skip(usize::from(format.has_header))
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                (
                    i + 1,
                    split_fields(l, &format.delimiter).into_iter().map(str::to_owned).collect(),
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn builds_sorted_dense_vocabulary() {
        let f = write("1::A (1995)::Comedy\n2::B::Action|Comedy\n3::C::Action\n");
        let c = load_catalog(f.path(), &CatalogFormat::movielens()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.genre_vocabulary(), &["Action".to_string(), "Comedy".to_string()]);
        assert_eq!(c.item(1).genres, vec![0, 1]);
        assert_eq!(c.genre_label(1), "Action|Comedy");
    }

    #[test]
    fn duplicate_id_is_named() {
        let f = write("1::A::Comedy\n1::B::Action\n");
        let err = load_catalog(f.path(), &CatalogFormat::movielens()).unwrap_err();
        assert!(matches!(err, TearsError::DuplicateItem(ref id) if id == "1"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write("1::A::Comedy\n2::broken\n");
        match load_catalog(f.path(), &CatalogFormat::movielens()) {
            Err(TearsError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn genreless_rows_are_rejected_not_fatal() {
        let f = write("1::A::Comedy\n2::B::(no genres listed)\n");
        let c = load_catalog(f.path(), &CatalogFormat::movielens()).unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn csv_with_quoted_titles() {
        let f = write("id,title,genres\n7,\"Crouching, Tiger\",Action|Drama\n");
        let c = load_catalog(f.path(), &CatalogFormat::csv()).unwrap();
        assert_eq!(c.item(0).title, "Crouching, Tiger");
        assert_eq!(c.num_genres(), 2);
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let c = ItemCatalog::from_rows(vec![
            ("a".into(), "A".into(), vec!["X".into()]),
            ("b".into(), "B".into(), vec!["Y".into(), "X".into()]),
        ])
        .unwrap();
        let back: ItemCatalog = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back.index_of("b"), Some(1));
        assert_eq!(back.content_hash(), c.content_hash());
    }
}
