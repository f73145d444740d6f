//! PK mini-batches of fixed-length clips.
//!
//! A batch holds `P` identities with `K` clips each, identity-major: clip
//! `(i, a)` sits at flat index `i * K + a`.

use std::collections::BTreeMap;
use std::sync::{Arc, Once};

use image::RgbImage;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::data::Tracklet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub tracklet_id: String,
    pub person_id: u32,
    pub camera_id: u32,
    pub frame_indices: Vec<usize>,
    pub frames: Vec<Arc<RgbImage>>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub clips: Vec<Clip>,
    pub p: usize,
    pub k: usize,
}

impl MiniBatch {
    /// Batch-local identity index `0..P` of every clip.
    pub fn person_index(&self) -> Vec<usize> {
        (0..self.p).flat_map(|i| std::iter::repeat_n(i, self.k)).collect()
    }

    pub fn person_ids(&self) -> Vec<u32> {
        self.clips.iter().map(|c| c.person_id).collect()
    }

    /// Checks the identity-major P x K structure.
    pub fn validate(&self) -> Result<()> {
        if self.clips.len() != self.p * self.k {
            return Err(Error::InvalidLayout(format!(
                "{} clips for P={} K={}",
                self.clips.len(),
                self.p,
                self.k
            )));
        }
        let mut seen = Vec::with_capacity(self.p);
        for group in self.clips.chunks(self.k) {
            let pid = group[0].person_id;
            if group.iter().any(|c| c.person_id != pid) || seen.contains(&pid) {
                return Err(Error::InvalidLayout("clips are not identity-major".into()));
            }
            seen.push(pid);
        }
        Ok(())
    }
}

/// Frame indices for one clip: split the tracklet into `t` equal chunks and
/// draw one frame per chunk. Tracklets shorter than `t` are repeated
/// cyclically.
pub fn clip_indices<R: Rng + ?Sized>(len: usize, t: usize, rng: &mut R) -> Vec<usize> {
    assert!(len > 0 && t > 0);
    if len < t {
        return (0..t).map(|i| i % len).collect();
    }
    (0..t)
        .map(|i| {
            let lo = i * len / t;
            let hi = (i + 1) * len / t;
            rng.random_range(lo..hi)
        })
        .collect()
}

/// Deterministic evaluation clip: the middle frame of each chunk.
pub fn center_clip_indices(len: usize, t: usize) -> Vec<usize> {
    assert!(len > 0 && t > 0);
    if len < t {
        return (0..t).map(|i| i % len).collect();
    }
    (0..t)
        .map(|i| {
            let lo = i * len / t;
            let hi = (i + 1) * len / t;
            (lo + hi - 1) / 2
        })
        .collect()
}

fn clip_from(tracklet: &Tracklet, frame_indices: Vec<usize>) -> Clip {
    Clip {
        tracklet_id: tracklet.tracklet_id.clone(),
        person_id: tracklet.person_id,
        camera_id: tracklet.camera_id,
        frames: frame_indices.iter().map(|&i| tracklet.frames[i].clone()).collect(),
        frame_indices,
    }
}

pub fn sample_clip<R: Rng + ?Sized>(tracklet: &Tracklet, t: usize, rng: &mut R) -> Result<Clip> {
    if t == 0 {
        return Err(Error::Config("clip length T must be >= 1".into()));
    }
    if tracklet.is_empty() {
        return Err(Error::Config(format!("tracklet {} has no frames", tracklet.tracklet_id)));
    }
    let idx = clip_indices(tracklet.len(), t, rng);
    Ok(clip_from(tracklet, idx))
}

pub fn center_clip(tracklet: &Tracklet, t: usize) -> Clip {
    clip_from(tracklet, center_clip_indices(tracklet.len(), t))
}

static SMALL_K: Once = Once::new();

fn check_pk(p: usize, k: usize, t: usize) -> Result<()> {
    if p == 0 || t == 0 {
        return Err(Error::Config("P and T must be >= 1".into()));
    }
    if k < 2 {
        return Err(Error::Config(format!("K must be >= 2, got {k}")));
    }
    if k < 3 {
        SMALL_K.call_once(|| {
            log::warn!("K={k}: with fewer than 3 clips per identity the intra-class DVDP and AITL terms are identically zero");
        });
    }
    Ok(())
}

fn group_by_identity(dataset: &[Tracklet]) -> BTreeMap<u32, Vec<usize>> {
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, t) in dataset.iter().enumerate() {
        by_id.entry(t.person_id).or_default().push(i);
    }
    by_id
}

fn clips_for_identity<R: Rng + ?Sized>(
    dataset: &[Tracklet],
    members: &[usize],
    k: usize,
    t: usize,
    rng: &mut R,
) -> Result<Vec<Clip>> {
    let chosen: Vec<usize> = if members.len() >= k {
        members.choose_multiple(rng, k).copied().collect()
    } else {
        (0..k).map(|_| members[rng.random_range(0..members.len())]).collect()
    };
    chosen.into_iter().map(|i| sample_clip(&dataset[i], t, rng)).collect()
}

fn batch_for<R: Rng + ?Sized>(
    dataset: &[Tracklet],
    by_id: &BTreeMap<u32, Vec<usize>>,
    ids: &[u32],
    k: usize,
    t: usize,
    rng: &mut R,
) -> Result<MiniBatch> {
    let mut clips = Vec::with_capacity(ids.len() * k);
    for pid in ids {
        clips.extend(clips_for_identity(dataset, &by_id[pid], k, t, rng)?);
    }
    Ok(MiniBatch { clips, p: ids.len(), k })
}

/// Draws `p` identities without replacement and `k` clips for each.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &[Tracklet],
    p: usize,
    k: usize,
    t: usize,
    rng: &mut R,
) -> Result<MiniBatch> {
    check_pk(p, k, t)?;
    let by_id = group_by_identity(dataset);
    if by_id.len() < p {
        return Err(Error::InsufficientIdentities {
            available: by_id.len(),
            requested: p,
        });
    }
    let ids: Vec<u32> = by_id.keys().copied().collect();
    let picked: Vec<u32> = ids.choose_multiple(rng, p).copied().collect();
    batch_for(dataset, &by_id, &picked, k, t, rng)
}

/// One pass over the identities: shuffles them and yields
/// `floor(#identities / P)` batches, each identity appearing at most once.
pub struct EpochIterator<'a, R: Rng> {
    dataset: &'a [Tracklet],
    by_id: BTreeMap<u32, Vec<usize>>,
    order: Vec<u32>,
    next: usize,
    p: usize,
    k: usize,
    t: usize,
    rng: R,
}

pub fn epoch_iterator<R: Rng>(dataset: &[Tracklet], p: usize, k: usize, t: usize, mut rng: R) -> Result<EpochIterator<'_, R>> {
    check_pk(p, k, t)?;
    let by_id = group_by_identity(dataset);
    if by_id.len() < p {
        return Err(Error::InsufficientIdentities {
            available: by_id.len(),
            requested: p,
        });
    }
    let mut order: Vec<u32> = by_id.keys().copied().collect();
    order.shuffle(&mut rng);
    Ok(EpochIterator {
        dataset,
        by_id,
        order,
        next: 0,
        p,
        k,
        t,
        rng,
    })
}

impl<R: Rng> EpochIterator<'_, R> {
    pub fn batches_per_epoch(&self) -> usize {
        self.order.len() / self.p
    }

    /// Hands back the RNG so the caller can continue the same stream.
    pub fn into_rng(self) -> R {
        self.rng
    }
}

impl<R: Rng> Iterator for EpochIterator<'_, R> {
    type Item = Result<MiniBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next + self.p > self.order.len() {
            return None;
        }
        let ids = self.order[self.next..self.next + self.p].to_vec();
        self.next += self.p;
        Some(batch_for(self.dataset, &self.by_id, &ids, self.k, self.t, &mut self.rng))
    }
}
