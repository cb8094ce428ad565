//! Complete verification of linear-constraint queries over ReLU graphs.

mod bounds;
mod minimize;
mod search;
mod types;

pub use bounds::{interval_bounds, output_bounds, Bounds};
pub use minimize::{find_min_output, MinBound};
pub use search::check;
pub use types::{
    clause_holds, split_box, Budget, Clause, Hyperbox, LinearConstraint, Query, Relation, Status, Verdict,
    STRICT_MARGIN,
};
