//! Customer links and the table assignment they induce.
//!
//! Two customers share a table when one can reach the other along links,
//! ignoring direction. [`LinkGraph`] keeps a reverse-link index so that a
//! single link change only re-explores the affected table.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Customer link vector: `links[i]` is the customer `i` sits with.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkState {
    links: Vec<usize>,
}

impl LinkState {
    pub fn new(links: Vec<usize>) -> Result<Self> {
        let n = links.len();
        if let Some((i, &c)) = links.iter().enumerate().find(|(_, &c)| c >= n) {
            return Err(Error::InvalidParameter(format!(
                "customer {i} links to {c}, but there are only {n} customers"
            )));
        }
        Ok(Self { links })
    }

    /// Every customer linked to itself.
    pub fn self_links(n: usize) -> Self {
        Self {
            links: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.links[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.links
    }
}

/// Canonical partition: tables numbered by smallest member, members ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableAssignment {
    table_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl TableAssignment {
    /// Canonicalizes an arbitrary grouping of `0..n`.
    pub fn from_groups(n: usize, groups: impl IntoIterator<Item = Vec<usize>>) -> Self {
        let mut members: Vec<Vec<usize>> = groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        members.sort_unstable_by_key(|g| g[0]);
        let mut table_of = vec![usize::MAX; n];
        for (k, g) in members.iter().enumerate() {
            for &i in g {
                table_of[i] = k;
            }
        }
        debug_assert!(table_of.iter().all(|&t| t != usize::MAX));
        Self { table_of, members }
    }

    pub fn n_customers(&self) -> usize {
        self.table_of.len()
    }

    /// Number of tables `K`.
    pub fn n_tables(&self) -> usize {
        self.members.len()
    }

    pub fn table_of(&self, i: usize) -> usize {
        self.table_of[i]
    }

    pub fn tables(&self) -> &[usize] {
        &self.table_of
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn all_members(&self) -> &[Vec<usize>] {
        &self.members
    }
}

/// Connected components of the undirected graph `{i - links[i]}`.
pub fn tables_from_links(links: &LinkState) -> TableAssignment {
    LinkGraph::new(links).assignment()
}

/// Assignment after deleting customer `i`'s link (so `i` links to itself).
///
/// The flag reports whether the table containing `i` split in two.
pub fn remove_link(links: &LinkState, i: usize, current: &TableAssignment) -> (TableAssignment, bool) {
    debug_assert_eq!(&tables_from_links(links), current);
    let mut graph = LinkGraph::new(links);
    let split = graph.unlink(i).is_some();
    (graph.assignment(), split)
}

/// Result of adding a link that joined two tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Merge {
    /// Table id that survives.
    pub kept: usize,
    /// Table id that was absorbed and freed.
    pub absorbed: usize,
}

/// Result of removing a link that split a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    /// Table now holding the unlinked customer.
    pub with_customer: usize,
    /// Table holding the rest.
    pub remainder: usize,
}

/// Mutable link state with table membership kept up to date.
///
/// Table ids here are internal slots and not canonical; use
/// [`LinkGraph::assignment`] for the canonical form.
#[derive(Debug, Clone)]
pub struct LinkGraph {
    links: Vec<usize>,
    in_links: Vec<Vec<usize>>,
    table_of: Vec<usize>,
    tables: Vec<Vec<usize>>,
    free: Vec<usize>,
    // Scratch space for traversals.
    mark: Vec<u32>,
    epoch: u32,
}

impl LinkGraph {
    pub fn new(state: &LinkState) -> Self {
        let n = state.len();
        let mut in_links = vec![Vec::new(); n];
        for (i, &c) in state.as_slice().iter().enumerate() {
            if c != i {
                in_links[c].push(i);
            }
        }
        let mut graph = Self {
            links: state.as_slice().to_vec(),
            in_links,
            table_of: vec![usize::MAX; n],
            tables: Vec::new(),
            free: Vec::new(),
            mark: vec![0; n],
            epoch: 0,
        };
        for i in 0..n {
            if graph.table_of[i] == usize::MAX {
                let members = graph.component(i, usize::MAX);
                let slot = graph.tables.len();
                for &m in &members {
                    graph.table_of[m] = slot;
                }
                graph.tables.push(members);
            }
        }
        graph
    }

    pub fn n_customers(&self) -> usize {
        self.links.len()
    }

    pub fn link_of(&self, i: usize) -> usize {
        self.links[i]
    }

    pub fn links(&self) -> LinkState {
        LinkState {
            links: self.links.clone(),
        }
    }

    pub fn table_of(&self, i: usize) -> usize {
        self.table_of[i]
    }

    /// Members of slot `t` (unordered). Empty for freed slots.
    pub fn members(&self, t: usize) -> &[usize] {
        &self.tables[t]
    }

    /// Number of slots, including freed ones.
    pub fn n_slots(&self) -> usize {
        self.tables.len()
    }

    pub fn n_tables(&self) -> usize {
        self.tables.len() - self.free.len()
    }

    /// Ids of occupied slots, ascending.
    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tables.len()).filter(|&t| !self.tables[t].is_empty())
    }

    pub fn assignment(&self) -> TableAssignment {
        TableAssignment::from_groups(
            self.links.len(),
            self.tables.iter().filter(|t| !t.is_empty()).cloned(),
        )
    }

    fn next_epoch(&mut self) -> u32 {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.mark.fill(0);
            self.epoch = 1;
        }
        self.epoch
    }

    /// Undirected component of `start`, ignoring the out-link of `skip_out_of`.
    fn component(&mut self, start: usize, skip_out_of: usize) -> Vec<usize> {
        let epoch = self.next_epoch();
        let mut out = vec![start];
        let mut queue = VecDeque::from([start]);
        self.mark[start] = epoch;
        while let Some(u) = queue.pop_front() {
            let out_link = (u != skip_out_of && self.links[u] != u).then(|| self.links[u]);
            let neighbors = out_link.into_iter().chain(
                self.in_links[u]
                    .iter()
                    .copied()
                    .filter(|&v| v != skip_out_of || u != self.links[skip_out_of]),
            );
            for v in neighbors.collect::<Vec<_>>() {
                if self.mark[v] != epoch {
                    self.mark[v] = epoch;
                    out.push(v);
                    queue.push_back(v);
                }
            }
        }
        out
    }

    /// Replaces `i`'s link with a self-link. Returns the split, if any.
    pub fn unlink(&mut self, i: usize) -> Option<Split> {
        let old = self.links[i];
        if old == i {
            return None;
        }
        let reached = self.component(i, i);
        self.links[i] = i;
        let pos = self.in_links[old]
            .iter()
            .position(|&v| v == i)
            .expect("reverse index out of sync");
        self.in_links[old].swap_remove(pos);

        let t = self.table_of[i];
        if reached.len() == self.tables[t].len() {
            return None;
        }
        let slot = self.alloc_slot();
        let epoch = self.epoch;
        let mark = &self.mark;
        self.tables[t].retain(|&m| mark[m] != epoch);
        for &m in &reached {
            self.table_of[m] = slot;
        }
        self.tables[slot] = reached;
        Some(Split {
            with_customer: slot,
            remainder: t,
        })
    }

    /// Links `i` to `j`. `i` must currently be self-linked.
    pub fn link(&mut self, i: usize, j: usize) -> Option<Merge> {
        assert_eq!(self.links[i], i, "customer {i} already has an outgoing link");
        if j == i {
            return None;
        }
        self.links[i] = j;
        self.in_links[j].push(i);
        let (a, b) = (self.table_of[i], self.table_of[j]);
        if a == b {
            return None;
        }
        // Absorb the smaller table; the lower slot survives on ties.
        let (kept, absorbed) = match self.tables[a].len().cmp(&self.tables[b].len()) {
            std::cmp::Ordering::Greater => (a, b),
            std::cmp::Ordering::Less => (b, a),
            std::cmp::Ordering::Equal => (a.min(b), a.max(b)),
        };
        let moved = std::mem::take(&mut self.tables[absorbed]);
        for &m in &moved {
            self.table_of[m] = kept;
        }
        self.tables[kept].extend(moved);
        self.free.push(absorbed);
        Some(Merge { kept, absorbed })
    }

    fn alloc_slot(&mut self) -> usize {
        match self.free.pop() {
            Some(s) => s,
            None => {
                self.tables.push(Vec::new());
                self.tables.len() - 1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(v: &[usize]) -> LinkState {
        LinkState::new(v.to_vec()).unwrap()
    }

    fn groups(a: &TableAssignment) -> Vec<Vec<usize>> {
        a.all_members().to_vec()
    }

    #[test]
    fn all_self_links() {
        let a = tables_from_links(&state(&[0, 1, 2]));
        assert_eq!(a.n_tables(), 3);
        assert_eq!(groups(&a), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn chain_is_one_table() {
        let a = tables_from_links(&state(&[1, 2, 2]));
        assert_eq!(groups(&a), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn two_pairs() {
        let a = tables_from_links(&state(&[1, 0, 3, 2]));
        assert_eq!(groups(&a), vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(a.tables(), &[0, 0, 1, 1]);
    }

    #[test]
    fn remove_link_cases() {
        let s = state(&[1, 1]);
        let (a, split) = remove_link(&s, 0, &tables_from_links(&s));
        assert!(split);
        assert_eq!(groups(&a), vec![vec![0], vec![1]]);

        let s = state(&[1, 0]);
        let (a, split) = remove_link(&s, 0, &tables_from_links(&s));
        assert!(!split);
        assert_eq!(groups(&a), vec![vec![0, 1]]);

        let s = state(&[0]);
        let (a, split) = remove_link(&s, 0, &tables_from_links(&s));
        assert!(!split);
        assert_eq!(groups(&a), vec![vec![0]]);
    }

    #[test]
    fn invalid_link_rejected() {
        assert!(LinkState::new(vec![0, 2]).is_err());
    }

    #[test]
    fn split_reports_slots() {
        let mut g = LinkGraph::new(&state(&[1, 2, 2, 2]));
        let split = g.unlink(1).unwrap();
        let mut with: Vec<usize> = g.members(split.with_customer).to_vec();
        with.sort();
        assert_eq!(with, vec![0, 1]);
        let mut rest: Vec<usize> = g.members(split.remainder).to_vec();
        rest.sort();
        assert_eq!(rest, vec![2, 3]);
        let merge = g.link(1, 3).unwrap();
        assert_eq!(g.n_tables(), 1);
        assert_ne!(merge.kept, merge.absorbed);
    }

    /// Reference components by repeated label propagation.
    fn brute_force(links: &[usize]) -> Vec<Vec<usize>> {
        let n = links.len();
        let mut label: Vec<usize> = (0..n).collect();
        loop {
            let mut changed = false;
            for i in 0..n {
                let j = links[i];
                let m = label[i].min(label[j]);
                if label[i] != m || label[j] != m {
                    label[i] = m;
                    label[j] = m;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            match out.iter_mut().find(|g| label[g[0]] == label[i]) {
                Some(g) => g.push(i),
                None => out.push(vec![i]),
            }
        }
        out
    }

    fn link_vector() -> impl Strategy<Value = Vec<usize>> {
        (1usize..12).prop_flat_map(|n| prop::collection::vec(0..n, n))
    }

    proptest! {
        #[test]
        fn matches_brute_force(links in link_vector()) {
            let a = tables_from_links(&state(&links));
            prop_assert_eq!(groups(&a), brute_force(&links));
            prop_assert!(a.n_tables() >= 1 && a.n_tables() <= links.len());
        }

        #[test]
        fn unlink_and_relink_restores(links in link_vector(), pick in any::<prop::sample::Index>()) {
            let s = state(&links);
            let i = pick.index(links.len());
            let before = tables_from_links(&s);
            let mut g = LinkGraph::new(&s);
            let split = g.unlink(i);
            let mut removed = links.clone();
            removed[i] = i;
            prop_assert_eq!(g.assignment(), tables_from_links(&state(&removed)));
            prop_assert_eq!(split.is_some(), remove_link(&s, i, &before).1);
            g.link(i, links[i]);
            prop_assert_eq!(g.assignment(), before);
        }

        #[test]
        fn reversing_an_edge_keeps_partition(links in link_vector(), pick in any::<prop::sample::Index>()) {
            // With j self-linked, reversing i -> j into j -> i keeps the same tables.
            let i = pick.index(links.len());
            let j = links[i];
            prop_assume!(j != i);
            let mut base = links.clone();
            base[j] = j;
            let mut rev = base.clone();
            rev[i] = i;
            rev[j] = i;
            prop_assert_eq!(tables_from_links(&state(&base)), tables_from_links(&state(&rev)));
        }

        #[test]
        fn random_walk_stays_consistent(
            links in link_vector(),
            moves in prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>()), 1..40),
        ) {
            let n = links.len();
            let mut g = LinkGraph::new(&state(&links));
            let mut current = links.clone();
            for (a, b) in moves {
                let (i, j) = (a.index(n), b.index(n));
                g.unlink(i);
                g.link(i, j);
                current[i] = j;
                prop_assert_eq!(g.assignment(), tables_from_links(&state(&current)));
                let occupied: usize = g.occupied().map(|t| g.members(t).len()).sum();
                prop_assert_eq!(occupied, n);
            }
        }
    }
}
