use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

/// User-level partition. Each list is sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn users(&self, role: SplitRole) -> &[String] {
        match role {
            SplitRole::Train => &self.train,
            SplitRole::Val => &self.val,
            SplitRole::Test => &self.test,
        }
    }

    pub fn role_of(&self, user: &str) -> Option<SplitRole> {
        [SplitRole::Train, SplitRole::Val, SplitRole::Test]
            .into_iter()
            .find(|r| self.users(*r).iter().any(|u| u == user))
    }
}

/// Shuffles users with `seed`, holds out a fifth for test, then a fifth of
/// the remainder for validation.
pub fn split_users(dataset: &Dataset, seed: u64) -> Result<Split> {
    let mut users = dataset.users();
    if users.len() < 5 {
        return Err(Error::usage(format!("need at least 5 users to split, found {}", users.len())));
    }
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (users.len() / 5).max(1);
    let rest = users.len() - n_test;
    let n_val = (rest / 5).max(1);
    let mut test = users[..n_test].to_vec();
    let mut val = users[n_test..n_test + n_val].to_vec();
    let mut train = users[n_test + n_val..].to_vec();
    test.sort();
    val.sort();
    train.sort();
    Ok(Split { train, val, test })
}
