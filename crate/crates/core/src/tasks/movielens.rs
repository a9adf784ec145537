//! MovieLens-1M `::`-separated files.
//!
//! The files are Latin-1; each byte is decoded as the code point of the same
//! value, which is exact for that encoding.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};

use crate::error::{Error, Result};

/// Largest tolerated share of unparseable lines per file.
const MAX_SKIP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawUser {
    pub id: u32,
    pub gender: String,
    /// Age bucket code as distributed (1, 18, 25, ...), or `None` if blank
    /// or non-numeric.
    pub age: Option<u32>,
    pub occupation: Option<u32>,
    pub zip: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMovie {
    pub id: u32,
    pub title: String,
    pub genres: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawRating {
    pub user: u32,
    pub movie: u32,
    pub rating: u8,
    pub timestamp: i64,
}

/// Lines skipped per file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SkipCounts {
    pub users: usize,
    pub movies: usize,
    pub ratings: usize,
}

/// Extra categorical item columns keyed by movie id (e.g. director, actor).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ItemEnrichment {
    pub names: Vec<String>,
    pub values: BTreeMap<u32, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawDataset {
    pub users: Vec<RawUser>,
    pub movies: BTreeMap<u32, RawMovie>,
    pub ratings: Vec<RawRating>,
    pub skipped: SkipCounts,
    pub enrichment: Option<ItemEnrichment>,
}

fn read_latin1(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn parse_id(s: &str) -> Option<u32> {
    s.trim().parse().ok()
}

/// `UserID::Gender::Age::Occupation::Zip-code`
pub fn parse_user_line(line: &str) -> Option<RawUser> {
    let f: Vec<&str> = line.split("::").collect();
    if f.len() != 5 {
        return None;
    }
    Some(RawUser {
        id: parse_id(f[0])?,
        gender: f[1].trim().to_string(),
        age: parse_id(f[2]),
        occupation: parse_id(f[3]),
        zip: f[4].trim().to_string(),
    })
}

/// `MovieID::Title::Genre|Genre|...`
pub fn parse_movie_line(line: &str) -> Option<RawMovie> {
    let f: Vec<&str> = line.split("::").collect();
    if f.len() != 3 {
        return None;
    }
    Some(RawMovie {
        id: parse_id(f[0])?,
        title: f[1].to_string(),
        genres: f[2]
            .split('|')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .map(String::from)
            .collect(),
    })
}

/// `UserID::MovieID::Rating::Timestamp`
pub fn parse_rating_line(line: &str) -> Option<RawRating> {
    let f: Vec<&str> = line.split("::").collect();
    if f.len() != 4 {
        return None;
    }
    let rating: u8 = f[2].trim().parse().ok()?;
    if !(1..=5).contains(&rating) {
        return None;
    }
    Some(RawRating {
        user: parse_id(f[0])?,
        movie: parse_id(f[1])?,
        rating,
        timestamp: f[3].trim().parse().ok()?,
    })
}

fn parse_file<T>(path: &Path, parse: impl Fn(&str) -> Option<T>) -> Result<(Vec<T>, usize)> {
    let text = read_latin1(path)?;
    let mut out = Vec::new();
    let mut skipped = 0usize;
    let mut total = 0usize;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse(line) {
            Some(v) => out.push(v),
            None => {
                skipped += 1;
                warn!("{}:{}: unparseable line skipped", path.display(), n + 1);
            }
        }
    }
    if total == 0 {
        return Err(Error::DegenerateInput(format!("{} has no records", path.display())));
    }
    if skipped as f64 > MAX_SKIP_FRACTION * total as f64 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("{skipped} of {total} lines unparseable"),
        });
    }
    Ok((out, skipped))
}

pub fn load_movielens(
    ratings_path: impl AsRef<Path>,
    users_path: impl AsRef<Path>,
    movies_path: impl AsRef<Path>,
) -> Result<RawDataset> {
    let (users, su) = parse_file(users_path.as_ref(), parse_user_line)?;
    let (movies, sm) = parse_file(movies_path.as_ref(), parse_movie_line)?;
    let (ratings, sr) = parse_file(ratings_path.as_ref(), parse_rating_line)?;
    let skipped = SkipCounts {
        users: su,
        movies: sm,
        ratings: sr,
    };
    info!(
        "loaded {} users, {} movies, {} ratings (skipped {:?})",
        users.len(),
        movies.len(),
        ratings.len(),
        skipped
    );
    Ok(RawDataset {
        users,
        movies: movies.into_iter().map(|m| (m.id, m)).collect(),
        ratings,
        skipped,
        enrichment: None,
    })
}

/// Tab-separated enrichment file: a header `movie_id<TAB>name...`, then one
/// row per movie. Blank cells are kept as empty strings.
pub fn load_item_enrichment(path: impl AsRef<Path>) -> Result<ItemEnrichment> {
    let path = path.as_ref();
    let text = read_latin1(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| {
        Error::DegenerateInput(format!("{} has no header", path.display()))
    })?;
    let names: Vec<String> = header.split('\t').skip(1).map(|s| s.trim().to_string()).collect();
    let mut values = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        let id = match (f.len() == names.len() + 1).then(|| parse_id(f[0])).flatten() {
            Some(id) => id,
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {}: expected {} columns", n + 2, names.len() + 1),
                })
            }
        };
        values.insert(id, f[1..].iter().map(|s| s.trim().to_string()).collect());
    }
    Ok(ItemEnrichment { names, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn user_line_fields() {
        let u = parse_user_line("1::F::1::10::48067").unwrap();
        assert_eq!(
            u,
            RawUser {
                id: 1,
                gender: "F".into(),
                age: Some(1),
                occupation: Some(10),
                zip: "48067".into()
            }
        );
        assert!(parse_user_line("1::F::1::10").is_none());
        assert_eq!(parse_user_line("2::M::::7::").unwrap().age, None);
    }

    #[test]
    fn movie_and_rating_lines() {
        let m = parse_movie_line("1::Toy Story (1995)::Animation|Children's|Comedy").unwrap();
        assert_eq!(m.genres, vec!["Animation", "Children's", "Comedy"]);
        let r = parse_rating_line("1::1193::5::978300760").unwrap();
        assert_eq!((r.user, r.movie, r.rating, r.timestamp), (1, 1193, 5, 978300760));
        assert!(parse_rating_line("1::1193::6::978300760").is_none());
        assert!(parse_rating_line("x::1193::5::978300760").is_none());
    }

    #[test]
    fn latin1_bytes_decode_one_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("movies.dat");
        std::fs::write(&p, b"7::Caf\xe9 (1999)::Drama\n").unwrap();
        let (movies, _) = parse_file(&p, parse_movie_line).unwrap();
        assert_eq!(movies[0].title, "Caf\u{e9} (1999)");
    }
}
