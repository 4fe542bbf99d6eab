mod common;

use common::criteria::{self, check_dialogue};
use proptest::prelude::*;

#[test]
fn randomized_dialogues_keep_the_loop_guarantees() {
    criteria::loop_guarantee().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn any_provider_behaviour_terminates(seed in any::<u64>(), budget in 0u32..6, failure_rate in 0u64..40) {
        let outcome = check_dialogue(seed, budget, failure_rate);
        prop_assert!(outcome.is_ok(), "{}", outcome.unwrap_err());
    }
}
