use std::sync::OnceLock;

use hallueval::annotations::{load_coco_instances, Corpus, ImageId};
use hallueval::chair::{score_chair, CaptionRecord};
use hallueval::faithscore::{score_faith, PromptTemplate};
use hallueval::geometry::{encode_group, iou, parse_group, BBox, BoxGroup};
use hallueval::pope::normalize_answer;
use hallueval::providers::{
    Cached, ChatProvider, EmbeddingProvider, MockChat, MockEmbedder, MockVqa, VqaProvider,
};
use proptest::prelude::*;

fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini/instances.json");
        load_coco_instances(&p, None).unwrap()
    })
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64)
        .prop_map(|(a, b, c, d)| BBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap())
}

const WORDS: &[&str] = &[
    "a", "dog", "dogs", "cat", "on", "the", "couch", "sofa", "hot", "red", "bike", "car", "man",
    "person", "table", "dining", "teddy", "bear", "with", "tv", "kitten",
];

fn caption() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..14).prop_map(|w| w.join(" "))
}

fn records() -> impl Strategy<Value = Vec<CaptionRecord>> {
    prop::collection::vec((101u64..=120, caption()), 1..12).prop_map(|v| {
        v.into_iter()
            .map(|(id, caption)| CaptionRecord { image_id: ImageId(id), caption })
            .collect()
    })
}

fn toy_embedding(t: &str) -> Vec<f64> {
    let mut v = vec![1e-3; 8];
    for (i, b) in t.bytes().enumerate() {
        v[(usize::from(b) + i) % 8] += 1.0;
    }
    v
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let x = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, iou(&b, &a));
        if a.area() > 0.0 {
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encoded_groups_parse_back(boxes in prop::collection::vec(bbox(), 1..6)) {
        let g = BoxGroup::new(boxes).unwrap();
        let back = parse_group(&encode_group(&g)).unwrap();
        // re-encoding is a fixed point
        prop_assert_eq!(encode_group(&back), encode_group(&g));
        prop_assert_eq!(back.len(), if g.len() > 3 { 1 } else { g.len() });
    }

    #[test]
    fn cache_is_transparent(texts in prop::collection::vec(caption(), 0..10)) {
        let plain = MockEmbedder::new("toy", toy_embedding);
        let cached = Cached::new(MockEmbedder::new("toy", toy_embedding));
        let direct = plain.embed(&texts).unwrap();
        for _ in 0..2 {
            let via = cached.embed(&texts).unwrap();
            prop_assert_eq!(&via.vectors, &direct.vectors);
        }
        let unique: std::collections::BTreeSet<_> =
            texts.iter().map(|t| hallueval::providers::input_key(t)).collect();
        prop_assert_eq!(cached.inner().texts_seen(), unique.len());

        let chat = Cached::new(MockChat::new(|p| p.to_uppercase()));
        let vqa = Cached::new(MockVqa::new(|img, q| format!("{img} {q}")));
        for t in &texts {
            prop_assert_eq!(chat.chat(t).unwrap(), t.to_uppercase());
            prop_assert_eq!(vqa.vqa(ImageId(3), t).unwrap(), format!("3 {t}"));
        }
    }

    #[test]
    fn chair_ignores_caption_order(recs in records(), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed as usize).wrapping_add(i * 7919) % (i + 1));
        }
        let a = score_chair(&recs, corpus()).unwrap();
        let b = score_chair(&shuffled, corpus()).unwrap();
        prop_assert_eq!(a.total_matched, b.total_matched);
        prop_assert_eq!(a.total_hallucinated, b.total_hallucinated);
        prop_assert!((a.chair_i - b.chair_i).abs() < 1e-12);
        prop_assert!((a.chair_s - b.chair_s).abs() < 1e-12);
        match (a.coverage, b.coverage) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn faithscore_ignores_caption_order(recs in records()) {
        let chat = MockChat::new(|p| {
            let cap = p.rsplit("Caption: ").next().unwrap_or("");
            cap.split_whitespace().collect::<Vec<_>>().chunks(2).map(|c| c.join(" ")).collect::<Vec<_>>().join("\n")
        });
        let vqa = MockVqa::new(|_, q| if q.contains("dog") { "yes".into() } else { "no".into() });
        let t = PromptTemplate::builtin();
        let mut rev = recs.clone();
        rev.reverse();
        let a = score_faith(&recs, &chat, &vqa, &t, None);
        let b = score_faith(&rev, &chat, &vqa, &t, None);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.total_facts, b.total_facts);
                prop_assert_eq!(a.positive, b.positive);
                prop_assert!((a.faith_score - b.faith_score).abs() < 1e-12);
            }
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn answers_normalize_stably(s in "[A-Za-z ,.!?]{0,30}") {
        if let Some(v) = normalize_answer(&s) {
            let word = if v { "yes" } else { "no" };
            prop_assert_eq!(normalize_answer(word), Some(v));
        }
    }
}
