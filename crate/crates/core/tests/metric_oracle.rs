//! score_phase against a per-instance counting oracle on random grids.

mod common;

use proptest::prelude::*;
use radcde::eval::Phase;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn extraction_counts_match_oracle(rows in common::metric_cells()) {
        common::check_metric(&rows, Phase::Extraction)?;
    }

    #[test]
    fn standardization_counts_match_oracle(rows in common::metric_cells()) {
        common::check_metric(&rows, Phase::Standardization)?;
    }
}
