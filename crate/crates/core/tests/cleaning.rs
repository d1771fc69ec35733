use farelens_core::clean::{clean, ExclusionReason};
use farelens_testkit::{defect_fixture, random_activity, DEFECT_COUNTS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn defect_fixture_partitions_exactly() {
    let rows = defect_fixture();
    assert_eq!(rows.len(), 100);
    let (retained, report) = clean(&rows);
    assert_eq!(report.input_count, 100);
    assert_eq!(report.retained_count, DEFECT_COUNTS.retained);
    assert_eq!(retained.len(), DEFECT_COUNTS.retained);
    assert_eq!(
        report.excluded_count(ExclusionReason::NegativeTakeRate),
        DEFECT_COUNTS.negative_take_rate
    );
    assert_eq!(
        report.excluded_count(ExclusionReason::NonRideshare),
        DEFECT_COUNTS.non_rideshare
    );
    assert_eq!(
        report.excluded_count(ExclusionReason::Cancelled),
        DEFECT_COUNTS.cancelled
    );
    assert_eq!(
        report.excluded_count(ExclusionReason::MissingFields),
        DEFECT_COUNTS.missing_fields
    );
    assert_eq!(report.excluded_count(ExclusionReason::UndefinedTakeRate), 0);
}

#[test]
fn first_matching_rule_wins() {
    // A cancelled delivery with negative fees is charged to non_rideshare only.
    let mut r = farelens_testkit::ride("x", "d", 2000, -100, 0);
    r.activity_type = farelens_core::ActivityType::Delivery;
    r.status = farelens_core::ActivityStatus::Cancelled;
    r.tips_usd = None;
    let (_, report) = clean([&r]);
    assert_eq!(report.excluded_count(ExclusionReason::NonRideshare), 1);
    assert_eq!(report.total_excluded(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn exclusions_partition_input(seed in any::<u64>(), n in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<_> = (0..n).map(|i| random_activity(&mut rng, i)).collect();
        let (retained, report) = clean(&rows);
        prop_assert_eq!(report.input_count, n);
        prop_assert_eq!(report.retained_count, retained.len());
        prop_assert_eq!(report.input_count, report.retained_count + report.total_excluded());
        prop_assert_eq!(report.excluded.len(), 5);
        for r in &retained {
            prop_assert!(r.take_rate_pct >= 0.0 && r.take_rate_pct.is_finite());
            prop_assert!(r.activity.is_analyzable());
        }
    }

    #[test]
    fn cleaning_ignores_input_order(seed in any::<u64>(), n in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<_> = (0..n).map(|i| random_activity(&mut rng, i)).collect();
        let mut reversed = rows.clone();
        reversed.reverse();
        prop_assert_eq!(clean(&rows), clean(&reversed));
    }
}
