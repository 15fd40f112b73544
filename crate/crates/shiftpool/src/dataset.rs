//! Data directories: `manifest.json` plus `wav/<id>.wav` and optional
//! `features/<id>.aapt` log-mel tensors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shiftpool_core::patch::{extract_patches, LogMelSpec};
use shiftpool_core::shift::EvalClip;
use shiftpool_core::synth::{generate, Split, SynthSpec};
use shiftpool_core::train::{ClipInputs, Example};

use crate::error::{Error, Result};
use crate::frontend::LogMel;
use crate::io::{read_json, read_tensor, write_json, write_tensor};
use crate::wav::{read_wav, write_wav};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub split: Split,
    /// Multi-hot label vector.
    pub target: Vec<u8>,
    /// Relative to the data directory.
    pub wav: String,
    #[serde(default)]
    pub features: Option<String>,
}

impl ClipEntry {
    pub fn target_f32(&self) -> Vec<f32> {
        self.target.iter().map(|&t| f32::from(t)).collect()
    }

    pub fn single_label(&self) -> Option<usize> {
        let mut on = self.target.iter().enumerate().filter(|(_, &t)| t != 0);
        match (on.next(), on.next()) {
            (Some((c, _)), None) => Some(c),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub sample_rate: u32,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    pub clips: Vec<ClipEntry>,
}

impl DataManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// A data directory opened for reading.
pub struct DataDir {
    root: PathBuf,
    manifest: DataManifest,
}

impl DataDir {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Usage(format!("data directory {} does not exist", root.display())));
        }
        let path = root.join(MANIFEST);
        if !path.is_file() {
            return Err(Error::Usage(format!("{} has no {MANIFEST}", root.display())));
        }
        let manifest: DataManifest = read_json(&path)?;
        for c in &manifest.clips {
            if c.target.len() != manifest.num_classes() || c.target.iter().any(|&t| t > 1) {
                return Err(Error::Failed(format!("clip {}: target must be {} binary entries", c.id, manifest.num_classes())));
            }
        }
        Ok(DataDir { root: root.to_path_buf(), manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DataManifest {
        &self.manifest
    }

    pub fn clips(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.manifest.clips.iter().filter(move |c| c.split == split)
    }

    /// Stored features when present, otherwise the log-mel of the WAV file.
    pub fn load_spec(&self, entry: &ClipEntry, frontend: &LogMel) -> Result<LogMelSpec> {
        if let Some(rel) = &entry.features {
            let values = read_tensor(&self.root.join(rel))?;
            return Ok(LogMelSpec::new(values, self.manifest.sample_rate)?);
        }
        let (samples, sr) = read_wav(&self.root.join(&entry.wav))?;
        if sr != frontend.geometry().sample_rate {
            return Err(Error::Failed(format!("{}: sample rate {sr} differs from {}", entry.wav, frontend.geometry().sample_rate)));
        }
        Ok(frontend.compute(&samples)?)
    }

    fn frontend(&self) -> Result<LogMel> {
        Ok(LogMel::new(self.manifest.sample_rate)?)
    }

    /// Every patch of every training clip, labelled with its clip target.
    pub fn training_examples(&self) -> Result<Vec<Example>> {
        let fe = self.frontend()?;
        let mut out = Vec::new();
        for c in self.clips(Split::Train) {
            let spec = self.load_spec(c, &fe)?;
            let target = c.target_f32();
            out.extend(extract_patches(&spec, &c.id).iter().map(|p| Example { input: p.as_input(), target: target.clone() }));
        }
        Ok(out)
    }

    /// Clip-level inputs for mAP evaluation.
    pub fn clip_inputs(&self, split: Split) -> Result<Vec<ClipInputs>> {
        let fe = self.frontend()?;
        self.clips(split)
            .map(|c| {
                let spec = self.load_spec(c, &fe)?;
                let inputs = extract_patches(&spec, &c.id).iter().map(|p| p.as_input()).collect();
                Ok(ClipInputs { id: c.id.clone(), inputs, target: c.target_f32() })
            })
            .collect()
    }

    /// Single-label clips of a split with their spectrograms and labels.
    pub fn eval_clips(&self, split: Split) -> Result<Vec<(EvalClip, usize)>> {
        let fe = self.frontend()?;
        self.clips(split)
            .filter_map(|c| c.single_label().map(|l| (c, l)))
            .map(|(c, l)| Ok((EvalClip { id: c.id.clone(), spec: self.load_spec(c, &fe)? }, l)))
            .collect()
    }
}

/// Renders a synthetic data set into `root`. Log-mel features are stored
/// next to the audio when `features` is set.
pub fn write_synthetic(root: &Path, spec: &SynthSpec, features: bool) -> Result<DataManifest> {
    let clips = generate(spec)?;
    let fe = LogMel::new(spec.sample_rate)?;
    let mut entries = Vec::with_capacity(clips.len());
    for clip in &clips {
        let wav = format!("wav/{}.wav", clip.id);
        write_wav(&root.join(&wav), &clip.samples, spec.sample_rate)?;
        let feat = if features {
            // Features are computed from the quantized audio so that both
            // paths through the data directory agree.
            let (samples, _) = read_wav(&root.join(&wav))?;
            let rel = format!("features/{}.aapt", clip.id);
            write_tensor(&root.join(&rel), fe.compute(&samples)?.values())?;
            Some(rel)
        } else {
            None
        };
        let mut target = vec![0u8; spec.num_classes()];
        target[clip.label] = 1;
        entries.push(ClipEntry { id: clip.id.clone(), split: clip.split, target, wav, features: feat });
    }
    let manifest = DataManifest {
        sample_rate: spec.sample_rate,
        class_names: (0..spec.num_classes()).map(|c| format!("class{c}")).collect(),
        synth: Some(spec.clone()),
        clips: entries,
    };
    write_json(&root.join(MANIFEST), &manifest)?;
    Ok(manifest)
}
