//! In-memory posed image collections.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub image: RgbImage,
}

/// Posed views with a train/test assignment (indices into `views`).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub views: Vec<View>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Scene {
    /// All views assigned to the training split.
    pub fn all_train(views: Vec<View>) -> Self {
        let train = (0..views.len()).collect();
        Scene {
            views,
            train,
            test: Vec::new(),
        }
    }

    pub fn split_of(&self, index: usize) -> Option<Split> {
        if self.train.contains(&index) {
            Some(Split::Train)
        } else if self.test.contains(&index) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn train_views(&self) -> impl Iterator<Item = &View> {
        self.train.iter().map(move |&i| &self.views[i])
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View> {
        self.test.iter().map(move |&i| &self.views[i])
    }

    /// Checks that split indices are in range and disjoint.
    pub fn validate(&self) -> Result<()> {
        let n = self.views.len();
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "split index {i} out of range for {n} views"
                )));
            }
        }
        if let Some(i) = self.train.iter().find(|i| self.test.contains(i)) {
            return Err(Error::InvalidArgument(format!(
                "view {i} is in both train and test splits"
            )));
        }
        Ok(())
    }
}
