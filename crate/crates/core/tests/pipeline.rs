use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scanscribe::data::{cyclic_shift, flip_horizontal, generate_phantom, Dataset, PhantomSpec, ShiftSets};
use scanscribe::fov::prescribe_stack;
use scanscribe::masking::ThresholdPolicy;

#[test]
fn labels_prescribe_alias_free_minimal_fovs() {
    let spec = PhantomSpec::new(64, 8, 21);
    for index in 0..25 {
        let p = generate_phantom(&spec, index).unwrap();
        let report = prescribe_stack(&p.stack, &p.label, &ThresholdPolicy::default()).unwrap();
        assert!(report.all_verdicts_pass(), "phantom {index}");
        assert!(report.fov.contains(&p.label));
    }
}

#[test]
fn dataset_is_a_pure_function_of_spec_and_count() {
    let spec = PhantomSpec::new(32, 4, 5);
    let a = Dataset::generate(&spec, 15).unwrap();
    let b = Dataset::generate(&spec, 15).unwrap();
    assert_eq!(a.records, b.records);
    let other = Dataset::generate(&PhantomSpec::new(32, 4, 6), 15).unwrap();
    assert_ne!(a.records, other.records);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn augmentation_keeps_labels_in_bounds(index in 0u64..500, seed in 0u64..1000) {
        let p = generate_phantom(&PhantomSpec::new(64, 6, 3), index).unwrap();
        let (flipped, flabel) = flip_horizontal(&p.stack, &p.label).unwrap();
        prop_assert_eq!(flipped.len(), p.stack.len());
        prop_assert!(flabel.within(64.0, 64.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dx, dy) = ShiftSets::scaled(64).sample(&mut rng);
        let s = cyclic_shift(&flipped, &flabel, dx, dy).unwrap();
        prop_assert!(s.label.within(64.0, 64.0));
        prop_assert_eq!(s.stack.len(), p.stack.len());
        prop_assert_eq!((s.stack.height(), s.stack.width()), (64, 64));
    }
}
