/// Per-anchor flat row indices chosen by a miner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletSelection {
    pub anchor: Vec<usize>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl TripletSelection {
    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }
}

// Strict comparisons keep the lowest index on ties.
fn arg_extreme(candidates: impl Iterator<Item = usize>, row: &[f64], want_max: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in candidates {
        let v = row[j];
        let better = match best {
            None => true,
            Some((_, b)) => {
                if want_max {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if better {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j)
}

/// Intra-class extremes: for each anchor, among the other rows with the same
/// identity, `negative` is the farthest and `positive` the nearest under
/// `dist`. Feeding feature distances gives FN/FP; attribute distances give
/// AN/AP.
pub fn intra_class_select(dist: &[Vec<f64>], person_index: &[usize]) -> TripletSelection {
    let n = person_index.len();
    let mut sel = TripletSelection {
        anchor: Vec::with_capacity(n),
        positive: Vec::with_capacity(n),
        negative: Vec::with_capacity(n),
    };
    for a in 0..n {
        let same = || (0..n).filter(move |&j| j != a && person_index[j] == person_index[a]);
        let (Some(far), Some(near)) = (
            arg_extreme(same(), &dist[a], true),
            arg_extreme(same(), &dist[a], false),
        ) else {
            continue;
        };
        sel.anchor.push(a);
        sel.negative.push(far);
        sel.positive.push(near);
    }
    sel
}

/// Batch-hard mining: farthest same-identity row and nearest
/// other-identity row for every anchor.
pub fn batch_hard_select(dist: &[Vec<f64>], person_index: &[usize]) -> TripletSelection {
    let n = person_index.len();
    let mut sel = TripletSelection {
        anchor: Vec::with_capacity(n),
        positive: Vec::with_capacity(n),
        negative: Vec::with_capacity(n),
    };
    for a in 0..n {
        let pos = arg_extreme(
            (0..n).filter(|&j| j != a && person_index[j] == person_index[a]),
            &dist[a],
            true,
        );
        let neg = arg_extreme((0..n).filter(|&j| person_index[j] != person_index[a]), &dist[a], false);
        if let (Some(p), Some(q)) = (pos, neg) {
            sel.anchor.push(a);
            sel.positive.push(p);
            sel.negative.push(q);
        }
    }
    sel
}
