//! Loader and preprocessing over small MovieLens-format fixtures, plus the
//! real files when `PAML_MOVIELENS_DIR` points at them.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use paml_core::tasks::{
    classify_major_minor, load_movielens, preprocess, Group, PreprocessConfig, RawDataset,
};
use paml_core::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    ratings: PathBuf,
    users: PathBuf,
    movies: PathBuf,
}

/// `users` rows are (id, gender, age, occupation, zip, number of ratings).
fn fixture(users: &[(u32, &str, u32, u32, &str, usize)]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut u = String::new();
    let mut r = String::new();
    let mut m = String::new();
    let genres = ["Drama", "Comedy", "Action", "Horror"];
    for id in 1..=20u32 {
        writeln!(m, "{id}::Movie {id} (1990)::{}|Thriller", genres[id as usize % 4]).unwrap();
    }
    for &(id, g, age, occ, zip, n) in users {
        writeln!(u, "{id}::{g}::{age}::{occ}::{zip}").unwrap();
        for k in 0..n {
            let movie = 1 + (id as usize * 7 + k) % 20;
            let rating = 1 + (id as usize + k) % 5;
            writeln!(r, "{id}::{movie}::{rating}::{}", 978300000 + k).unwrap();
        }
    }
    let write = |name: &str, s: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, s).unwrap();
        p
    };
    Fixture {
        ratings: write("ratings.dat", &r),
        users: write("users.dat", &u),
        movies: write("movies.dat", &m),
        _dir: dir,
    }
}

fn load(f: &Fixture) -> RawDataset {
    load_movielens(&f.ratings, &f.users, &f.movies).unwrap()
}

fn ids(eps: &[paml_core::tasks::TaskEpisode]) -> BTreeSet<u32> {
    eps.iter().map(|e| e.user.user_id).collect()
}

fn all_ids(s: &paml_core::tasks::DatasetSplits) -> BTreeSet<u32> {
    s.all_episodes().map(|e| e.user.user_id).collect()
}

fn ten_users_by_log_count() -> Fixture {
    let rows: Vec<(u32, &str, u32, u32, &str, usize)> = (1..=10)
        .map(|i| (i, if i % 2 == 0 { "F" } else { "M" }, 25, i % 3, "48067", i as usize + 1))
        .collect();
    fixture(&rows)
}

#[test]
fn cold_start_keeps_users_with_fewest_logs() {
    let f = ten_users_by_log_count();
    let s = preprocess(&load(&f), &PreprocessConfig::default()).unwrap();
    assert_eq!(all_ids(&s), (1..=8).collect());
}

#[test]
fn underage_and_garbled_users_are_removed() {
    let f = fixture(&[
        (1, "F", 25, 1, "48067", 5),
        (2, "M", 5, 1, "48067", 5),
        (3, "M", 25, 1, "T8H1N", 5),
        (4, "", 25, 1, "48067", 5),
        (5, "F", 1, 1, "55117-1234", 5),
        (6, "M", 35, 2, "02139", 1),
    ]);
    let cfg = PreprocessConfig {
        cold_start_fraction: 1.0,
        ..PreprocessConfig::default()
    };
    let s = preprocess(&load(&f), &cfg).unwrap();
    assert_eq!(all_ids(&s), BTreeSet::from([1, 5]));
}

#[test]
fn ten_survivors_split_seven_one_two() {
    let f = ten_users_by_log_count();
    let cfg = PreprocessConfig {
        cold_start_fraction: 1.0,
        ..PreprocessConfig::default()
    };
    let s = preprocess(&load(&f), &cfg).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
    let (a, b, c) = (ids(&s.train), ids(&s.validation), ids(&s.test));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
}

#[test]
fn episodes_are_disjoint_and_split_eighty_twenty() {
    let f = ten_users_by_log_count();
    let cfg = PreprocessConfig {
        cold_start_fraction: 1.0,
        seed: 4,
        ..PreprocessConfig::default()
    };
    let s = preprocess(&load(&f), &cfg).unwrap();
    for e in s.all_episodes() {
        let n = e.support.len() + e.query.len();
        assert!(!e.support.is_empty() && !e.query.is_empty());
        let want = (0.8 * n as f64).ceil() as usize;
        assert!(e.support.len().abs_diff(want) <= 1);
        let sup: BTreeSet<(u32, i64)> =
            e.support.iter().map(|i| (i.item_id, i.timestamp.unwrap())).collect();
        assert!(e.query.iter().all(|i| !sup.contains(&(i.item_id, i.timestamp.unwrap()))));
        for (id, v) in e.user.features.iter().zip(&s.schema.user_vocab) {
            assert!(id < v);
        }
    }
}

#[test]
fn same_seed_same_splits() {
    let f = ten_users_by_log_count();
    let raw = load(&f);
    let cfg = PreprocessConfig {
        seed: 99,
        ..PreprocessConfig::default()
    };
    let a = preprocess(&raw, &cfg).unwrap();
    let b = preprocess(&raw, &cfg).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn labels_partition_all_users() {
    let f = ten_users_by_log_count();
    let s = preprocess(&load(&f), &PreprocessConfig::default()).unwrap();
    assert_eq!(s.labels.keys().copied().collect::<BTreeSet<_>>(), all_ids(&s));
    assert_eq!(s.labels, classify_major_minor(&s));
}

#[test]
fn everything_filtered_is_degenerate() {
    let f = fixture(&[(1, "F", 5, 1, "48067", 5), (2, "M", 25, 1, "48067", 1)]);
    let cfg = PreprocessConfig {
        cold_start_fraction: 1.0,
        ..PreprocessConfig::default()
    };
    assert!(matches!(preprocess(&load(&f), &cfg), Err(Error::DegenerateInput(_))));
}

#[test]
fn empty_ratings_file_is_degenerate() {
    let f = fixture(&[(1, "F", 25, 1, "48067", 0)]);
    assert!(matches!(
        load_movielens(&f.ratings, &f.users, &f.movies),
        Err(Error::DegenerateInput(_))
    ));
}

#[test]
fn missing_file_is_io_error() {
    let f = ten_users_by_log_count();
    let missing = f.ratings.with_file_name("nope.dat");
    assert!(matches!(
        load_movielens(&missing, &f.users, &f.movies),
        Err(Error::Io { .. })
    ));
}

#[test]
fn malformed_lines_skipped_up_to_one_percent() {
    let rows: Vec<(u32, &str, u32, u32, &str, usize)> =
        (1..=10).map(|i| (i, "F", 25, 1, "48067", 20)).collect();
    let f = fixture(&rows);
    let mut text = std::fs::read_to_string(&f.ratings).unwrap();
    text.push_str("garbage line\n");
    std::fs::write(&f.ratings, &text).unwrap();
    let raw = load(&f);
    assert_eq!(raw.skipped.ratings, 1);
    assert_eq!(raw.ratings.len(), 200);

    text.push_str("1::2::9::0\n1::2\n");
    std::fs::write(&f.ratings, &text).unwrap();
    assert!(matches!(
        load_movielens(&f.ratings, &f.users, &f.movies),
        Err(Error::Parse { .. })
    ));
}

fn movielens_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var("PAML_MOVIELENS_DIR").unwrap_or_else(|_| "data/ml-1m".into()));
    let base = if dir.is_absolute() {
        dir
    } else {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(dir)
    };
    base.join("ratings.dat").exists().then_some(base)
}

#[test]
fn real_movielens_when_available() {
    let Some(dir) = movielens_dir() else {
        eprintln!("MovieLens-1M not found; skipping real-data checks");
        return;
    };
    let raw = load_movielens(dir.join("ratings.dat"), dir.join("users.dat"), dir.join("movies.dat"))
        .unwrap();
    assert_eq!(raw.users.len(), 6040);
    let first = raw.users.iter().find(|u| u.id == 1).unwrap();
    assert_eq!((first.gender.as_str(), first.age, first.occupation, first.zip.as_str()),
        ("F", Some(1), Some(10), "48067"));
    let s = preprocess(&raw, &PreprocessConfig::default()).unwrap();
    let n = s.labels.len() as f64;
    let major = s.labels.values().filter(|g| **g == Group::Major).count() as f64 / n;
    eprintln!("{} users after preprocessing, major fraction {major:.3}", s.labels.len());
    assert!((major - 0.65).abs() <= 0.03, "major fraction {major}");
}
