use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Strategy as PropStrategy};

use super::*;
use crate::masks::BinaryMask;
use crate::nn::Tensor;

const SIDE: usize = 16;

fn view_with(ids: &[StructureId]) -> ViewInput {
    let mut ms = MaskSet::new(SIDE, SIDE);
    for (i, &id) in ids.iter().enumerate() {
        ms.insert(id, BinaryMask::from_points(SIDE, SIDE, &[(i, i), (i + 1, i)]).unwrap())
            .unwrap();
    }
    ViewInput::new(GrayImage::filled(SIDE, SIDE, 100), ms).unwrap()
}

fn study(frontal: &[StructureId], lateral: Option<&[StructureId]>, prior: Option<&[StructureId]>) -> StudyInput {
    StudyInput {
        frontal: view_with(frontal),
        lateral: lateral.map(view_with),
        prior: prior.map(view_with),
        context: TextualContext::default(),
        findings: None,
    }
}

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

fn seg_slots(p: &Prompt) -> Vec<(View, StructureId, TokenKind)> {
    let mut out = Vec::new();
    for s in &p.segments {
        match s {
            PromptSegment::Seg { view, structure, token } => out.push((*view, *structure, *token)),
            PromptSegment::CombinedSeg { view, structures } => {
                for &st in structures {
                    out.push((*view, st, TokenKind::Mask));
                    out.push((*view, st, TokenKind::Spatial));
                }
            }
            _ => {}
        }
    }
    out
}

use StructureId::*;

#[test]
fn ns_frontal_only_is_the_baseline_layout() {
    let p = build_prompt(&study(&[], None, None), PromptOptions::new(Strategy::Ns)).unwrap();
    assert_eq!(
        p.segments,
        vec![
            PromptSegment::text(SYSTEM_TEXT),
            PromptSegment::Image {
                view: View::CurrentFrontal
            },
            PromptSegment::text(format!("{INSTRUCTION}.")),
        ]
    );
    assert!(!p.degraded);
    assert_eq!(p.context_start, 3);
}

#[test]
fn ss_interleaves_name_then_pair_per_structure() {
    let p = build_prompt(&study(&[LeftLung, Heart], None, None), PromptOptions::new(Strategy::Ss)).unwrap();
    let seg = |structure, token| PromptSegment::Seg {
        view: View::CurrentFrontal,
        structure,
        token,
    };
    assert_eq!(
        &p.segments[1..8],
        &[
            PromptSegment::Image {
                view: View::CurrentFrontal
            },
            PromptSegment::text(", left lung mask"),
            seg(LeftLung, TokenKind::Mask),
            seg(LeftLung, TokenKind::Spatial),
            PromptSegment::text(", heart mask"),
            seg(Heart, TokenKind::Mask),
            seg(Heart, TokenKind::Spatial),
        ]
    );
    let PromptSegment::Text { text } = &p.segments[8] else {
        panic!("instruction expected")
    };
    assert!(text.ends_with("use them to describe the left lung and heart in your findings."));
}

#[test]
fn multi_view_slot_counts_partition_by_view() {
    let s = study(&[LeftLung, RightLung, Heart], None, Some(&[LeftLung, Ett]));
    let p = build_prompt(&s, PromptOptions::new(Strategy::Ss)).unwrap();
    let slots = seg_slots(&p);
    assert_eq!(slots.len(), 10);
    assert!(slots[..6].iter().all(|s| s.0 == View::CurrentFrontal));
    assert!(slots[6..].iter().all(|s| s.0 == View::PriorFrontal));
    assert!(p
        .segments
        .contains(&PromptSegment::text(", prior endotracheal tube mask")));
    let prior_img = p
        .segments
        .iter()
        .position(|s| {
            *s == PromptSegment::Image {
                view: View::PriorFrontal,
            }
        })
        .unwrap();
    assert_eq!(p.segments[prior_img - 1], PromptSegment::text(PRIOR_INTRO));
}

#[test]
fn seg_slots_stay_between_their_image_and_the_next() {
    let s = study(&[Heart], Some(&[LeftLung, RightLung]), Some(&[Heart]));
    for strategy in Strategy::ALL {
        let p = build_prompt(&s, PromptOptions::new(strategy)).unwrap();
        let mut current = None;
        for seg in &p.segments {
            match seg {
                PromptSegment::Image { view } => current = Some(*view),
                PromptSegment::Seg { view, .. } | PromptSegment::CombinedSeg { view, .. } => {
                    assert_eq!(Some(*view), current, "{strategy}")
                }
                _ => {}
            }
        }
        assert_eq!(p.image_slots(), 3);
    }
}

#[test]
fn dc_places_an_unlabeled_block_right_after_the_image() {
    let p = build_prompt(&study(&[LeftLung, Heart], None, None), PromptOptions::new(Strategy::Dc)).unwrap();
    assert!(matches!(
        p.segments[2],
        PromptSegment::Seg {
            structure: LeftLung,
            ..
        }
    ));
    assert!(matches!(
        p.segments[5],
        PromptSegment::Seg {
            structure: Heart,
            token: TokenKind::Spatial,
            ..
        }
    ));
    assert_eq!(p.segments[6], PromptSegment::text(", left lung mask"));
}

#[test]
fn cs_places_one_combined_slot_after_the_names() {
    let p = build_prompt(&study(&[LeftLung, Heart], None, None), PromptOptions::new(Strategy::Cs)).unwrap();
    assert_eq!(p.segments[2], PromptSegment::text(", left lung mask"));
    assert_eq!(p.segments[3], PromptSegment::text(", heart mask"));
    assert_eq!(
        p.segments[4],
        PromptSegment::CombinedSeg {
            view: View::CurrentFrontal,
            structures: vec![LeftLung, Heart]
        }
    );
}

#[test]
fn token_counts_add_two_per_positive_structure() {
    let s = study(
        &[LeftLung, Heart, Pneumothorax],
        Some(&[Heart]),
        Some(&[RightLung, ChestTube]),
    );
    let ns = count_tokens(&build_prompt(&s, PromptOptions::new(Strategy::Ns)).unwrap(), 16, words);
    for strategy in [Strategy::Dc, Strategy::Cs, Strategy::Ss] {
        let p = build_prompt(&s, PromptOptions::new(strategy)).unwrap();
        assert_eq!(count_tokens(&p, 16, words), ns + 2 * 6, "{strategy}");
        assert_eq!(p.seg_tokens(), 12);
    }
    let bare = build_prompt(&study(&[], None, None), PromptOptions::new(Strategy::Ns)).unwrap();
    assert_eq!(
        count_tokens(&bare, 16, words),
        words(SYSTEM_TEXT) + 16 + words(&format!("{INSTRUCTION}."))
    );
}

#[test]
fn missing_masks_degrade_to_ns() {
    let s = study(&[], None, None);
    for strategy in [Strategy::Dc, Strategy::Cs, Strategy::Ss] {
        let p = build_prompt(&s, PromptOptions::new(strategy)).unwrap();
        assert!(p.degraded);
        assert_eq!(p.strategy, Strategy::Ns);
        assert_eq!(
            p.segments,
            build_prompt(&s, PromptOptions::new(Strategy::Ns)).unwrap().segments
        );
    }
}

#[test]
fn single_view_drops_other_views_and_context() {
    let mut s = study(&[Heart], Some(&[Heart]), Some(&[Heart]));
    s.context.indication = Some("cough".into());
    let p = build_prompt(&s, PromptOptions::new(Strategy::Ss).single_view(true)).unwrap();
    assert_eq!(p.image_slots(), 1);
    assert_eq!(p.context_start, p.segments.len());
    let multi = build_prompt(&s, PromptOptions::new(Strategy::Ss)).unwrap();
    assert_eq!(
        multi.segments[multi.context_start..],
        [PromptSegment::text("INDICATION: cough")]
    );
}

#[test]
fn context_omits_missing_sections_and_keeps_order() {
    let ctx = TextualContext {
        indication: Some("fever".into()),
        technique: None,
        comparison: Some("  ".into()),
        prior_report: Some("clear lungs .".into()),
    };
    assert_eq!(ctx.sections(), vec!["INDICATION: fever", "PRIOR REPORT: clear lungs ."]);
}

#[test]
fn prior_view_changes_the_instruction() {
    let p = build_prompt(&study(&[], None, Some(&[])), PromptOptions::new(Strategy::Ns)).unwrap();
    assert!(p
        .segments
        .contains(&PromptSegment::text(format!("{INSTRUCTION}{PRIOR_CLAUSE}."))));
}

#[test]
fn mask_unaware_ns_ignores_masks() {
    let s = study(&[LeftLung, Heart], Some(&[Heart]), None);
    let opts = PromptOptions::new(Strategy::Ns).mask_aware(false);
    assert_eq!(
        build_prompt(&s, opts).unwrap(),
        build_prompt(&s.without_masks(), opts).unwrap()
    );
}

#[test]
fn json_dump_tags_variants() {
    let p = build_prompt(&study(&[Heart], None, None), PromptOptions::new(Strategy::Cs)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
    assert_eq!(v[1]["kind"], "image");
    assert_eq!(v[1]["view"], "current_frontal");
    assert_eq!(v[3]["kind"], "combined_seg");
    assert_eq!(v[3]["structures"][0], "heart");
    let back: Vec<PromptSegment> = serde_json::from_value(v).unwrap();
    assert_eq!(back, p.segments);
}

#[test]
fn strategy_parsing() {
    assert_eq!("ss".parse::<Strategy>().unwrap(), Strategy::Ss);
    assert_eq!("CS".parse::<Strategy>().unwrap(), Strategy::Cs);
    assert!("XX".parse::<Strategy>().is_err());
}

// Realization helpers: every word becomes a one-row embedding derived from its bytes.
fn word_row(w: &str) -> Vec<f64> {
    let h = w
        .bytes()
        .fold(17u64, |a, b| a.wrapping_mul(31).wrapping_add(u64::from(b)));
    vec![(h % 1000) as f64, w.len() as f64]
}

fn embed_words(g: &mut Graph<'_>, text: &str) -> Result<Option<Var>> {
    let rows: Vec<f64> = text.split_whitespace().flat_map(word_row).collect();
    if rows.is_empty() {
        return Ok(None);
    }
    Ok(Some(g.input(Tensor::matrix(rows.len() / 2, 2, rows)?)))
}

fn token_row(g: &mut Graph<'_>, a: f64, b: f64) -> Var {
    g.input(Tensor::matrix(1, 2, vec![a, b]).unwrap())
}

fn frontal_embeddings(g: &mut Graph<'_>, ids: &[StructureId]) -> BTreeMap<View, ViewEmbeddings> {
    let image = g.input(Tensor::matrix(16, 2, vec![0.5; 32]).unwrap());
    let tokens = ids
        .iter()
        .enumerate()
        .map(|(i, &structure)| SegTokenVars {
            structure,
            mask: token_row(g, -1.0, i as f64),
            spatial: token_row(g, -2.0, i as f64),
        })
        .collect();
    BTreeMap::from([(View::CurrentFrontal, ViewEmbeddings { image, tokens })])
}

#[test]
fn realization_lengths_are_additive() {
    let s = study(&[LeftLung, Heart], None, None);
    let mut g = Graph::detached();
    let views = frontal_embeddings(&mut g, &[LeftLung, Heart]);
    let opts = PromptOptions::new(Strategy::Ns);
    let ns = build_prompt(&s, opts).unwrap();
    let ns_len = realize_embeddings(&mut g, &ns, &views, embed_words).unwrap();
    let ns_len = g.shape(ns_len)[0];
    assert_eq!(ns_len, count_tokens(&ns, 16, words));
    let ss = build_prompt(&s, PromptOptions::new(Strategy::Ss)).unwrap();
    let ss_len = realize_embeddings(&mut g, &ss, &views, embed_words).unwrap();
    let ss_len = g.shape(ss_len)[0];
    assert_eq!(ss_len, ns_len + 4);

    let bare = build_prompt(&study(&[], None, None), opts).unwrap();
    let text_tokens = words(SYSTEM_TEXT) + words(&format!("{INSTRUCTION}."));
    let len = realize_embeddings(&mut g, &bare, &views, embed_words).unwrap();
    let len = g.shape(len)[0];
    assert_eq!(len, text_tokens + 16);
}

#[test]
fn unresolvable_slots_name_the_slot() {
    let s = study(&[LeftLung, Heart], None, None);
    let mut g = Graph::detached();
    let views = frontal_embeddings(&mut g, &[LeftLung]);
    let p = build_prompt(&s, PromptOptions::new(Strategy::Ss)).unwrap();
    let err = realize_embeddings(&mut g, &p, &views, embed_words)
        .unwrap_err()
        .to_string();
    assert!(err.contains("current_frontal/heart"), "{err}");
    let lateral = build_prompt(&study(&[], Some(&[]), None), PromptOptions::new(Strategy::Ns)).unwrap();
    let err = realize_embeddings(&mut g, &lateral, &views, embed_words)
        .unwrap_err()
        .to_string();
    assert!(err.contains("current_lateral"), "{err}");
}

#[test]
fn swapping_structure_blocks_swaps_only_those_rows() {
    let s = study(&[LeftLung, Heart], None, None);
    let mut g = Graph::detached();
    let views = frontal_embeddings(&mut g, &[LeftLung, Heart]);
    let p = build_prompt(&s, PromptOptions::new(Strategy::Ss)).unwrap();
    let mut swapped = p.clone();
    // blocks are [name, mask, spatial] at 2..5 and 5..8
    let (a, b) = (p.segments[2..5].to_vec(), p.segments[5..8].to_vec());
    swapped.segments.splice(2..8, b.into_iter().chain(a));
    let rows = |g: &mut Graph<'_>, p: &Prompt| {
        let v = realize_embeddings(g, p, &views, embed_words).unwrap();
        g.value(v).data().chunks(2).map(<[f64]>::to_vec).collect::<Vec<_>>()
    };
    let (orig, swap) = (rows(&mut g, &p), rows(&mut g, &swapped));
    let prefix = words(SYSTEM_TEXT) + 16;
    let (ll, heart) = (4 + 2, 3 + 2);
    assert_eq!(orig[..prefix], swap[..prefix]);
    assert_eq!(orig[prefix..prefix + ll], swap[prefix + heart..prefix + heart + ll]);
    assert_eq!(orig[prefix + ll..prefix + ll + heart], swap[prefix..prefix + heart]);
    assert_eq!(orig[prefix + ll + heart..], swap[prefix + ll + heart..]);
}

fn structure_subset() -> impl PropStrategy<Value = Vec<StructureId>> {
    prop::collection::btree_set(0usize..9, 0..=9).prop_map(|idx| idx.into_iter().map(|i| StructureId::ALL[i]).collect())
}

proptest! {
    #[test]
    fn seg_token_multiset_is_strategy_independent(
        f in structure_subset(), l in structure_subset(), p in structure_subset(),
    ) {
        let s = study(&f, Some(&l), Some(&p));
        let mut sets: Vec<_> = [Strategy::Dc, Strategy::Cs, Strategy::Ss]
            .into_iter()
            .map(|st| {
                let mut slots = seg_slots(&build_prompt(&s, PromptOptions::new(st)).unwrap());
                slots.sort_by_key(|(v, s, k)| (*v, *s, *k as u8));
                slots
            })
            .collect();
        let first = sets.remove(0);
        for other in sets {
            prop_assert_eq!(&first, &other);
        }
        prop_assert_eq!(first.len(), 2 * (f.len() + l.len() + p.len()));
    }

    #[test]
    fn every_seg_slot_is_a_positive_mask(f in structure_subset(), p in structure_subset(), st in 0usize..4) {
        let s = study(&f, None, Some(&p));
        let prompt = build_prompt(&s, PromptOptions::new(Strategy::ALL[st])).unwrap();
        for (view, structure, _) in seg_slots(&prompt) {
            prop_assert!(s.view(view).unwrap().masks.get(structure).is_some_and(BinaryMask::is_positive));
        }
    }

    #[test]
    fn build_is_deterministic_and_injective(a in structure_subset(), b in structure_subset(), st in 0usize..4) {
        let opts = PromptOptions::new(Strategy::ALL[st]);
        let pa = build_prompt(&study(&a, None, None), opts).unwrap();
        prop_assert_eq!(&pa, &build_prompt(&study(&a, None, None), opts).unwrap());
        let pb = build_prompt(&study(&b, None, None), opts).unwrap();
        prop_assert_eq!(a == b, pa == pb);
    }

    #[test]
    fn mask_unaware_ns_matches_maskless_study(f in structure_subset(), l in structure_subset()) {
        let s = study(&f, Some(&l), None);
        let opts = PromptOptions::new(Strategy::Ns).mask_aware(false);
        prop_assert_eq!(build_prompt(&s, opts).unwrap(), build_prompt(&s.without_masks(), opts).unwrap());
    }
}
