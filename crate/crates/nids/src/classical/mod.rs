//! Classical baseline models used next to the networks: random forest,
//! gradient boosting and logistic regression, plus the decision trees they
//! are built from.

pub mod forest;
pub mod gbm;
pub mod logistic;
pub mod tree;

pub use forest::{RandomForest, RandomForestConfig};
pub use gbm::{GradientBoosting, GradientBoostingConfig};
pub use logistic::{LogisticRegression, LogisticRegressionConfig};
