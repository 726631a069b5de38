//! Crack topology updates: extrinsic insertion of cohesive interface elements
//! with node duplication, and reconstruction of the interface faces from the
//! bulk connectivity after each change.

use std::collections::{HashMap, HashSet};

use super::basis::QUAD9_EDGES;
use super::{Arm, InterfaceElement, Mesh, SegStatus, Segment};
use crate::error::SimError;

/// What an insertion changed, so solver state can be carried over.
#[derive(Debug, Clone)]
pub struct InsertOutcome {
    /// Index of the new interface element in `mesh.interfaces`.
    pub iface: usize,
    /// (existing node, duplicated node) pairs; the copy starts from the
    /// existing node's kinematic state.
    pub duplicated: Vec<(usize, usize)>,
    /// Pressure slots allocated by this insertion (2 along a crack front, 3
    /// for the very first segment).
    pub new_pslots: Vec<usize>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let r = self.find(self.0[i]);
            self.0[i] = r;
        }
        self.0[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl Mesh {
    /// Insert an interface element on the first intact segment of an arm. The
    /// segment must be adjacent to the current crack tip; anything else is a
    /// topology error, as is re-inserting a cracked segment.
    pub fn insert_segment(
        &mut self,
        arm: Arm,
        seg_idx: usize,
        notch: bool,
    ) -> Result<InsertOutcome, SimError> {
        let tip = self.path.cracked_len(arm);
        let segs = self.path.arm(arm);
        if seg_idx >= segs.len() {
            return Err(SimError::Topology(format!(
                "segment {seg_idx} out of range for arm of {} segments",
                segs.len()
            )));
        }
        if segs[seg_idx].status != SegStatus::Intact {
            return Err(SimError::Topology(format!(
                "segment {seg_idx} already carries an interface element"
            )));
        }
        if seg_idx != tip {
            return Err(SimError::Topology(format!(
                "segment {seg_idx} is not adjacent to the crack tip (next insertable is {tip})"
            )));
        }
        if arm != Arm::Vertical && !self.path.reached_bed() {
            return Err(SimError::Topology(
                "horizontal cracking requires the vertical crevasse to reach the bed".into(),
            ));
        }

        let seg = self.path.arm_mut(arm)[seg_idx].clone();
        self.path.arm_mut(arm)[seg_idx].status =
            if notch { SegStatus::Notch } else { SegStatus::Cohesive };

        let mut new_pslots = Vec::new();
        for n in [seg.inner, seg.mid, seg.outer] {
            if !self.pressure_slots.contains_key(&n) {
                self.pressure_slots.insert(n, self.n_pressure);
                new_pslots.push(self.n_pressure);
                self.n_pressure += 1;
            }
        }

        let (normal, tangent) = match arm {
            Arm::Vertical => ([1.0, 0.0], [0.0, -1.0]),
            Arm::Right => ([0.0, 1.0], [1.0, 0.0]),
            Arm::Left => ([0.0, 1.0], [-1.0, 0.0]),
        };
        let pslots = [
            self.pressure_slots[&seg.inner],
            self.pressure_slots[&seg.mid],
            self.pressure_slots[&seg.outer],
        ];
        self.interfaces.push(InterfaceElement {
            arm,
            seg_idx,
            plus: [0; 3],
            minus: [0; 3],
            pslots,
            normal,
            tangent,
            length: seg.length,
            depth: seg.depth,
            notch,
        });
        let iface = self.interfaces.len() - 1;

        let duplicated = self.split_path_nodes()?;
        self.rebuild_faces()?;
        Ok(InsertOutcome {
            iface,
            duplicated,
            new_pslots,
        })
    }

    fn cracked_segments(&self) -> Vec<&Segment> {
        [Arm::Vertical, Arm::Left, Arm::Right]
            .iter()
            .flat_map(|&a| self.path.arm(a))
            .filter(|s| s.status != SegStatus::Intact)
            .collect()
    }

    /// Duplicate nodes wherever cracked edges disconnect the surrounding
    /// elements. Groups of elements connected through uncracked edges keep a
    /// common node; each further group gets a fresh copy.
    fn split_path_nodes(&mut self) -> Result<Vec<(usize, usize)>, SimError> {
        let cracked: HashSet<(usize, usize)> = self
            .cracked_segments()
            .iter()
            .map(|s| (s.inner.min(s.outer), s.inner.max(s.outer)))
            .collect();
        let mut candidates: Vec<usize> = self
            .cracked_segments()
            .iter()
            .flat_map(|s| [s.inner, s.mid, s.outer])
            .collect();
        candidates.sort_unstable();
        candidates.dedup();

        let mut duplicated = Vec::new();
        for v in candidates {
            let copies = self.copies_of(v).to_vec();
            let mut elems: Vec<u32> = copies
                .iter()
                .flat_map(|&c| self.node_elems[c].iter().copied())
                .collect();
            elems.sort_unstable();
            elems.dedup();
            if elems.len() < 2 {
                continue;
            }

            let mut uf = UnionFind::new(elems.len());
            let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
            for (li, &e) in elems.iter().enumerate() {
                let nodes = &self.elems[e as usize].nodes;
                for edge in &QUAD9_EDGES {
                    if edge.iter().any(|&k| self.orig[nodes[k]] == v) {
                        let (a, b) = (self.orig[nodes[edge[0]]], self.orig[nodes[edge[2]]]);
                        by_edge.entry((a.min(b), a.max(b))).or_default().push(li);
                    }
                }
            }
            for (key, members) in &by_edge {
                if !cracked.contains(key) {
                    for w in members.windows(2) {
                        uf.union(w[0], w[1]);
                    }
                }
            }

            let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
            for li in 0..elems.len() {
                groups.entry(uf.find(li)).or_default().push(li);
            }
            if groups.len() < 2 {
                continue;
            }
            let mut roots: Vec<usize> = groups.keys().copied().collect();
            roots.sort_unstable();

            let node_in = |mesh: &Mesh, e: u32| -> Result<usize, SimError> {
                mesh.elems[e as usize]
                    .nodes
                    .iter()
                    .copied()
                    .find(|&n| mesh.orig[n] == v)
                    .ok_or_else(|| SimError::Topology(format!("element {e} lost node {v}")))
            };

            let mut claimed: HashSet<usize> = HashSet::new();
            for root in roots {
                let members = &groups[&root];
                // all elements of one group share the same copy: groups only
                // ever refine as the crack grows
                let cur = node_in(self, elems[members[0]])?;
                if claimed.insert(cur) {
                    continue;
                }
                let fresh = self.coords.len();
                self.coords.push(self.coords[cur]);
                self.orig.push(v);
                self.node_elems.push(Vec::new());
                self.copies.entry(v).or_insert_with(|| vec![v]).push(fresh);
                for &li in members {
                    let e = elems[li];
                    for n in self.elems[e as usize].nodes.iter_mut() {
                        if *n == cur {
                            *n = fresh;
                        }
                    }
                    self.node_elems[cur].retain(|&x| x != e);
                    self.node_elems[fresh].push(e);
                }
                duplicated.push((cur, fresh));
            }
        }
        Ok(duplicated)
    }

    /// Recompute the plus/minus faces of every interface element from the bulk
    /// connectivity; node duplication near a tip can reassign face nodes of
    /// previously inserted elements.
    pub(crate) fn rebuild_faces(&mut self) -> Result<(), SimError> {
        for i in 0..self.interfaces.len() {
            let (arm, seg_idx, normal) = {
                let f = &self.interfaces[i];
                (f.arm, f.seg_idx, f.normal)
            };
            let seg = self.path.arm(arm)[seg_idx].clone();
            let mut adjacent: Vec<u32> = self
                .copies_of(seg.mid)
                .iter()
                .flat_map(|&c| self.node_elems[c].iter().copied())
                .collect();
            adjacent.sort_unstable();
            adjacent.dedup();
            if adjacent.len() != 2 {
                return Err(SimError::Topology(format!(
                    "crack segment has {} adjacent elements, expected 2",
                    adjacent.len()
                )));
            }
            let seg_mid = self.coords[seg.mid];
            let mut plus = None;
            let mut minus = None;
            for &e in &adjacent {
                let nodes = &self.elems[e as usize].nodes;
                let pick = |want: usize| -> Result<usize, SimError> {
                    nodes
                        .iter()
                        .copied()
                        .find(|&n| self.orig[n] == want)
                        .ok_or_else(|| {
                            SimError::Topology(format!("element {e} misses path node {want}"))
                        })
                };
                let face = [pick(seg.inner)?, pick(seg.mid)?, pick(seg.outer)?];
                let centre = self.coords[nodes[8]];
                let side = (centre[0] - seg_mid[0]) * normal[0] + (centre[1] - seg_mid[1]) * normal[1];
                if side > 0.0 {
                    plus = Some(face);
                } else {
                    minus = Some(face);
                }
            }
            match (plus, minus) {
                (Some(p), Some(m)) => {
                    self.interfaces[i].plus = p;
                    self.interfaces[i].minus = m;
                }
                _ => {
                    return Err(SimError::Topology(
                        "interface element has both adjacent elements on one side".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}
