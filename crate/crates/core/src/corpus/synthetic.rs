//! Seeded synthetic splits for smoke runs and for auditing without the
//! official data.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetSplit, Genre, LabeledSample, SplitName, TaskId};

/// Keywords emitted for class 0. Disjoint from [`CLASS1_WORDS`].
pub const CLASS0_WORDS: [&str; 12] = [
    "مؤامرة", "خيانة", "عدو", "كارثة", "فضيحة", "تدمير", "خطر", "مرتزقة", "عملاء", "انهيار", "رعب", "غضب",
];

/// Keywords emitted for class 1.
pub const CLASS1_WORDS: [&str; 12] = [
    "اجتماع", "تقرير", "جامعة", "مطار", "طقس", "معرض", "مكتبة", "حديقة", "قطار", "مدرسة", "سوق", "ملعب",
];

/// A split whose two classes use disjoint vocabularies, so any reasonable
/// bag-of-tokens model separates them. Samples alternate genres and are
/// shuffled deterministically by `seed`.
pub fn separable_split(task: TaskId, split: SplitName, class0: usize, class1: usize, seed: u64) -> DatasetSplit {
    let vocab = task.vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(class0 + class1);
    let plan = std::iter::repeat_n(0usize, class0).chain(std::iter::repeat_n(1usize, class1));
    for (i, class) in plan.enumerate() {
        let words: &[&str] = if class == 0 { &CLASS0_WORDS } else { &CLASS1_WORDS };
        let len = rng.random_range(5..=10);
        let text = (0..len).map(|_| *words.choose(&mut rng).expect("nonempty")).collect::<Vec<_>>().join(" ");
        let genre = if i % 2 == 0 { Genre::Tweet } else { Genre::Paragraph };
        samples.push(LabeledSample::new(format!("{split}-{i:05}"), text, vocab.name(class)).with_genre(genre));
    }
    use rand::seq::SliceRandom;
    samples.shuffle(&mut rng);
    DatasetSplit::new(split, task, vocab, samples).expect("synthetic split is valid")
}

/// A split with exactly `counts[c]` samples of class `c` and filler text.
/// Used to exercise the dataset audit when the official files are absent.
pub fn counted_split(task: TaskId, split: SplitName, counts: &[u64]) -> DatasetSplit {
    let vocab = task.vocab();
    assert_eq!(counts.len(), vocab.len(), "one count per class");
    let mut samples = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
    for (class, &n) in counts.iter().enumerate() {
        for i in 0..n {
            samples.push(LabeledSample::new(
                format!("{task}-{split}-{class}-{i:06}"),
                format!("نص اصطناعي {i}"),
                vocab.name(class),
            ));
        }
    }
    DatasetSplit::new(split, task, vocab, samples).expect("counts must not all be zero")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::class_distribution;

    #[test]
    fn separable_split_has_requested_counts_and_is_seeded() {
        let a = separable_split(TaskId::Persuasion1A, SplitName::Train, 51, 13, 7);
        let b = separable_split(TaskId::Persuasion1A, SplitName::Train, 51, 13, 7);
        assert_eq!(a, b);
        let d = class_distribution(&a).unwrap();
        assert_eq!(d.count("prop"), Some(51));
        assert_eq!(d.count("non-prop"), Some(13));
        for s in a.samples() {
            let vocab: &[&str] = if s.label == "prop" { &CLASS0_WORDS } else { &CLASS1_WORDS };
            assert!(s.text.split(' ').all(|w| vocab.contains(&w)));
        }
    }

    #[test]
    fn vocabularies_are_disjoint() {
        assert!(CLASS0_WORDS.iter().all(|w| !CLASS1_WORDS.contains(w)));
    }

    #[test]
    fn counted_split_counts() {
        let s = counted_split(TaskId::Disinfo2A, SplitName::Dev, &[397, 1718]);
        let d = class_distribution(&s).unwrap();
        assert_eq!(d.count("disinfo"), Some(397));
        assert_eq!(d.count("no-disinfo"), Some(1718));
    }
}
