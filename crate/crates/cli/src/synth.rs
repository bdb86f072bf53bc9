//! Writes the labelled synthetic fixture as an EMB1 dataset.

use std::path::Path;

use loopguard_core::synthetic::SeparationFixture;
use loopguard_core::{EmbeddingMatrix, ManifestEntry, SampleManifest};

use crate::error::{CliError, Result};
use crate::pipeline::LABEL_TAG;
use crate::store;

/// Manifest for a generated fixture: ids `normal-NNNNN` / `anomaly-NNNNN`
/// and the construction label under the `label` tag.
pub fn fixture_manifest(is_anomaly: &[bool]) -> SampleManifest {
    let mut counts = [0usize; 2];
    let entries = is_anomaly
        .iter()
        .map(|&a| {
            let label = if a { "anomaly" } else { "normal" };
            let k = &mut counts[usize::from(a)];
            let mut e = ManifestEntry::new(format!("{label}-{:05}", *k));
            *k += 1;
            e.source_path = "synthetic".into();
            e.tags.insert(LABEL_TAG.into(), label.into());
            e
        })
        .collect();
    SampleManifest { entries }
}

/// Generates `fixture` and saves it to `path` plus its manifest sidecar.
pub fn write_fixture(path: &Path, fixture: &SeparationFixture) -> Result<(EmbeddingMatrix, SampleManifest)> {
    let labeled = fixture
        .generate()
        .map_err(|e| CliError::config("fixture", e.to_string()))?;
    let data = EmbeddingMatrix::from_matrix(&labeled.data).map_err(|e| CliError::from_core("synth", e))?;
    let manifest = fixture_manifest(&labeled.is_anomaly);
    store::save_embeddings(path, &data, &manifest).map_err(|e| match e {
        store::StoreError::Io(io) => CliError::io(format!("cannot write {}", path.display()), io),
        other => CliError::artifact(path, other),
    })?;
    Ok((data, manifest))
}
