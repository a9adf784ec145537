//! Users, interactions and per-user episodes, plus the data sources that
//! produce them.

mod groups;
mod movielens;
mod preprocess;
mod synth;

use std::collections::BTreeMap;

pub use groups::{classify_major_minor, top_value_sets};
pub use movielens::{
    load_item_enrichment, load_movielens, parse_movie_line, parse_rating_line, parse_user_line,
    ItemEnrichment, RawDataset, RawMovie, RawRating, RawUser, SkipCounts,
};
pub use preprocess::{preprocess, split_counts, PreprocessConfig};
pub use synth::{synth_group, synth_splits, synth_two_group, SynthConfig};

use crate::model::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Major,
    Minor,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Major => "major",
            Group::Minor => "minor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackKind {
    /// Ratings in 1..=5.
    Rating,
    /// Clicks in {0, 1}.
    Click,
}

impl FeedbackKind {
    pub fn admits(self, v: f64) -> bool {
        match self {
            FeedbackKind::Rating => (1.0..=5.0).contains(&v),
            FeedbackKind::Click => v == 0.0 || v == 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserProfile {
    pub user_id: u32,
    /// Categorical feature ids, one per user feature of the schema.
    pub features: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub item_id: u32,
    pub features: Vec<usize>,
    pub feedback: f64,
    pub timestamp: Option<i64>,
}

/// One user's support and query interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEpisode {
    pub user: UserProfile,
    pub support: Vec<Interaction>,
    pub query: Vec<Interaction>,
}

impl TaskEpisode {
    fn batch(&self, items: &[Interaction]) -> Batch {
        Batch {
            user: self.user.features.clone(),
            items: items.iter().map(|i| i.features.clone()).collect(),
            targets: items.iter().map(|i| i.feedback).collect(),
        }
    }

    pub fn support_batch(&self) -> Batch {
        self.batch(&self.support)
    }

    pub fn query_batch(&self) -> Batch {
        self.batch(&self.query)
    }
}

/// Names and vocabulary sizes of the categorical features.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureSchema {
    pub user_names: Vec<String>,
    pub user_vocab: Vec<usize>,
    pub item_names: Vec<String>,
    pub item_vocab: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<TaskEpisode>,
    pub validation: Vec<TaskEpisode>,
    pub test: Vec<TaskEpisode>,
    pub schema: FeatureSchema,
    pub feedback: FeedbackKind,
    /// Major/minor label of every user in any split.
    pub labels: BTreeMap<u32, Group>,
}

impl DatasetSplits {
    pub fn all_episodes(&self) -> impl Iterator<Item = &TaskEpisode> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn group_of(&self, user_id: u32) -> Option<Group> {
        self.labels.get(&user_id).copied()
    }
}
