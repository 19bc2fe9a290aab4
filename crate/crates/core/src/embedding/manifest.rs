//! Planning the set of requests an experiment suite needs.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{request_hash, EmbedError, EmbeddingRequest, RequestId};
use crate::perturb::{perturb_instance, Masking};
use crate::sampler::TaskDataset;
use crate::ud::Split;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: RequestId,
    pub request: EmbeddingRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtractionManifest {
    pub model_id: String,
    pub requests: Vec<ManifestEntry>,
}

impl ExtractionManifest {
    pub fn new(model_id: &str) -> Self {
        Self { model_id: model_id.to_string(), requests: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn ids(&self) -> HashSet<RequestId> {
        self.requests.iter().map(|e| e.id).collect()
    }

    /// Append requests whose hash is not present yet, keeping first-seen order.
    pub fn extend(&mut self, requests: impl IntoIterator<Item = EmbeddingRequest>) {
        let mut seen = self.ids();
        for request in requests {
            let id = request_hash(&request);
            if seen.insert(id) {
                self.requests.push(ManifestEntry { id, request });
            }
        }
    }

    /// Ids unique and equal to the hash of their request.
    pub fn validate(&self) -> Result<(), EmbedError> {
        let mut seen = HashSet::new();
        for e in &self.requests {
            e.request.validate()?;
            if request_hash(&e.request) != e.id {
                return Err(EmbedError::Integrity(format!("manifest id {} does not hash its request", e.id)));
            }
            if e.request.model_id != self.model_id {
                return Err(EmbedError::Integrity(format!("request {} targets {}", e.id, e.request.model_id)));
            }
            if !seen.insert(e.id) {
                return Err(EmbedError::Integrity(format!("duplicate manifest id {}", e.id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let io = |source| EmbedError::Io { path: path.display().to_string(), source };
        fs::write(path, serde_json::to_vec_pretty(self).expect("manifest serializes")).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let bytes = fs::read(path).map_err(|source| EmbedError::Io { path: path.display().to_string(), source })?;
        let m: Self = serde_json::from_slice(&bytes)
            .map_err(|e| EmbedError::Integrity(format!("{}: malformed manifest: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }
}

/// Every request needed to run each masking over `splits` of `dataset`,
/// one per distinct (instance, masking) result.
pub fn plan_manifest(
    dataset: &TaskDataset,
    splits: &[Split],
    maskings: &[Masking],
    seed: u64,
    model_id: &str,
) -> ExtractionManifest {
    let mut manifest = ExtractionManifest::new(model_id);
    for &masking in maskings {
        for &split in splits {
            manifest.extend(
                dataset
                    .split(split)
                    .iter()
                    .enumerate()
                    .map(|(i, inst)| EmbeddingRequest::from_perturbed(&perturb_instance(inst, masking, seed, split, i), model_id)),
            );
        }
    }
    manifest
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{Coalition, Perturbation};
    use crate::sampler::{ProbingInstance, TaskSpec};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn instance(n: usize, target: usize) -> ProbingInstance {
        ProbingInstance { words: (0..n).map(|i| format!("w{i}")).collect(), target_index: target, label: "Sing".into() }
    }

    fn dataset(test: Vec<ProbingInstance>) -> TaskDataset {
        TaskDataset {
            spec: TaskSpec::new("xx", "NOUN", "Number"),
            train: vec![],
            dev: vec![],
            test,
            labels: vec!["Plur".into(), "Sing".into()],
        }
    }

    fn all_coalitions() -> Vec<Masking> {
        Coalition::all().map(Masking::from).collect()
    }

    /// Naive oracle: the set of canonical JSON strings of every variant.
    fn naive(ds: &TaskDataset, maskings: &[Masking]) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        for &m in maskings {
            for (i, inst) in ds.test.iter().enumerate() {
                let r = EmbeddingRequest::from_perturbed(&perturb_instance(inst, m, 0, Split::Test, i), "m");
                set.insert(String::from_utf8(r.canonical_json()).unwrap());
            }
        }
        set
    }

    #[test]
    fn original_and_targ_give_two_requests() {
        let m = plan_manifest(&dataset(vec![instance(6, 2)]), &[Split::Test], &[Perturbation::Original.into(), Perturbation::Targ.into()], 0, "m");
        assert_eq!(m.len(), 2);
        m.validate().unwrap();
    }

    #[test]
    fn short_sentence_collapses_coalitions() {
        let m = plan_manifest(&dataset(vec![instance(3, 1)]), &[Split::Test], &all_coalitions(), 0, "m");
        assert_eq!(m.len(), 8);
        let m = plan_manifest(&dataset(vec![instance(12, 6)]), &[Split::Test], &all_coalitions(), 0, "m");
        assert_eq!(m.len(), 512);
    }

    #[test]
    fn many_instances_match_brute_force_count() {
        let insts: Vec<_> = (0..200).map(|i| instance(3 + i % 11, (i * 7) % (3 + i % 11))).collect();
        let ds = dataset(insts);
        let m = plan_manifest(&ds, &[Split::Test], &all_coalitions(), 0, "m");
        let oracle = naive(&ds, &all_coalitions());
        assert_eq!(m.len(), oracle.len());
        let got: BTreeSet<String> = m.requests.iter().map(|e| String::from_utf8(e.request.canonical_json()).unwrap()).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = plan_manifest(&dataset(vec![instance(5, 2)]), &[Split::Test], &Perturbation::standard_suite().into_iter().map(Masking::from).collect::<Vec<_>>(), 3, "m");
        m.save(&dir.path().join("m.json")).unwrap();
        assert_eq!(ExtractionManifest::load(&dir.path().join("m.json")).unwrap(), m);
    }

    fn arb_instances() -> impl Strategy<Value = Vec<ProbingInstance>> {
        prop::collection::vec(
            (1usize..9).prop_flat_map(|n| (Just(n), 0..n)).prop_map(|(n, t)| instance(n, t)),
            0..6,
        )
    }

    /// Maskings that do not depend on an instance's index in its split.
    fn arb_maskings() -> impl Strategy<Value = Vec<Masking>> {
        let fixed: Vec<Masking> = Perturbation::standard_suite()
            .into_iter()
            .filter(|p| *p != Perturbation::Permute)
            .map(Masking::from)
            .collect();
        prop::collection::vec(
            prop_oneof![(0u16..512).prop_map(|c| Masking::from(Coalition(c))), prop::sample::select(fixed)],
            0..6,
        )
    }

    proptest! {
        #[test]
        fn union_of_plans_covers_plan_of_union(xi in arb_instances(), yi in arb_instances(), m in arb_maskings()) {
            let (dx, dy) = (dataset(xi.clone()), dataset(yi.clone()));
            let dxy = dataset(xi.into_iter().chain(yi).collect());
            let mut union = plan_manifest(&dx, &[Split::Test], &m, 0, "m").ids();
            union.extend(plan_manifest(&dy, &[Split::Test], &m, 0, "m").ids());
            let joint = plan_manifest(&dxy, &[Split::Test], &m, 0, "m");
            prop_assert!(union.is_superset(&joint.ids()));
            prop_assert_eq!(joint.len(), naive(&dxy, &m).len());
            joint.validate().unwrap();
        }
    }
}
