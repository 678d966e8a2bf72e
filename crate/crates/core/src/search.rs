//! Tree search over first-hitting unmasking events.
//!
//! Each retained node is expanded once: one event time, one denoiser call,
//! one uniformly chosen masked position and its top-`b` tokens as children.
//! Children are scored by resubstitution and the pool is cut back to `m`
//! nodes under a canonical ordering. All draws come from [`NodeRng`], so two
//! runs that share a seed agree on every node they have in common.

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{score_previous_step, score_true_posterior};
use crate::error::{Error, Result};
use crate::ledger::NfeLedger;
use crate::mdlm::{Denoiser, NoiseSchedule, ProbMatrix, Sequence, TokenId, Vocab};
use crate::rewards::Reward;
use crate::rng::{open_unit, uniform_index, NodeRng};
use crate::samplers::fhs_next_time;

/// Where a node sits in the tree: the level it was created at (its masked
/// count), the rank of its parent in the parent list and its rank among
/// that parent's children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub level: usize,
    pub parent_rank: usize,
    pub branch_rank: usize,
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub seq: Sequence,
    pub tau: f64,
    pub score: f64,
    /// Matrix the node was branched from; `None` for the root.
    pub parent_mu: Option<Arc<ProbMatrix>>,
    /// Position and token committed when this node was created.
    pub committed: Option<(usize, TokenId)>,
    pub lineage: Lineage,
}

impl SearchNode {
    pub fn root(len: usize, vocab: &Vocab) -> Self {
        SearchNode {
            seq: Sequence::all_mask(len, vocab),
            tau: 1.0,
            score: 0.0,
            parent_mu: None,
            committed: None,
            lineage: Lineage {
                level: len,
                parent_rank: 0,
                branch_rank: 0,
            },
        }
    }

    /// The state this node was expanded from, recovered by re-masking the
    /// committed position.
    pub fn parent_seq(&self, vocab: &Vocab) -> Sequence {
        match self.committed {
            Some((pos, _)) => self.seq.with(pos, vocab.mask_id()),
            None => self.seq.clone(),
        }
    }

    pub fn key(&self) -> NodeKey {
        NodeKey {
            seq: self.seq.clone(),
            tau_bits: self.tau.to_bits(),
        }
    }
}

/// Identity of a node across runs: its state and exact event time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub seq: Sequence,
    pub tau_bits: u64,
}

/// A per-level width: one value for every level, or an explicit list where
/// entry `n − 1` applies at level `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelWidth {
    Constant(usize),
    PerLevel(Vec<usize>),
}

impl LevelWidth {
    pub fn at(&self, level: usize) -> usize {
        match self {
            LevelWidth::Constant(w) => *w,
            LevelWidth::PerLevel(ws) => ws[level - 1],
        }
    }

    fn validate(&self, what: &str, len: usize) -> Result<()> {
        match self {
            LevelWidth::Constant(0) => Err(Error::domain(format!("{what} must be at least 1"))),
            LevelWidth::Constant(_) => Ok(()),
            LevelWidth::PerLevel(ws) if ws.len() != len => Err(Error::domain(format!(
                "{what} schedule has {} entries for {len} levels",
                ws.len()
            ))),
            LevelWidth::PerLevel(ws) => match ws.iter().position(|&w| w == 0) {
                Some(i) => Err(Error::domain(format!("{what} at level {} is zero", i + 1))),
                None => Ok(()),
            },
        }
    }
}

/// Beam width `b(n)` and tree width `m(n)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthSchedule {
    pub beam: LevelWidth,
    pub tree: LevelWidth,
}

impl WidthSchedule {
    pub fn constant(beam: usize, tree: usize) -> Self {
        WidthSchedule {
            beam: LevelWidth::Constant(beam),
            tree: LevelWidth::Constant(tree),
        }
    }

    pub fn beam_at(&self, level: usize) -> usize {
        self.beam.at(level)
    }

    pub fn tree_at(&self, level: usize) -> usize {
        self.tree.at(level)
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        self.beam.validate("beam width", len)?;
        self.tree.validate("tree width", len)
    }
}

/// How children are scored before pruning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Argmax fill from the parent's matrix; no extra evaluations.
    #[default]
    Resubstitute,
    /// Reward of the parent state, masks included.
    PreviousStep,
    /// Argmax fill from a fresh evaluation at the child; one extra call per child.
    TruePosterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub widths: WidthSchedule,
    #[serde(default)]
    pub scorer: Scorer,
    /// Unmasking groups `k`; 1 is the plain search.
    #[serde(default = "one")]
    pub groups: usize,
}

fn one() -> usize {
    1
}

impl SearchConfig {
    pub fn new(widths: WidthSchedule) -> Self {
        SearchConfig {
            widths,
            scorer: Scorer::Resubstitute,
            groups: 1,
        }
    }

    pub fn with_scorer(mut self, scorer: Scorer) -> Self {
        self.scorer = scorer;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

/// Output of one expansion: the committed position, the shared event time
/// and matrix, and the chosen tokens best first.
#[derive(Debug, Clone)]
pub struct Branch {
    pub index: usize,
    pub tau_next: f64,
    pub tokens: Vec<TokenId>,
    pub mu: Arc<ProbMatrix>,
}

/// The `b` most probable non-mask tokens of a row with positive mass,
/// ties to the lower id.
pub fn top_tokens(row: &[f64], b: usize, vocab: &Vocab) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..vocab.real_tokens() as TokenId)
        .filter(|&v| row[v as usize] > 0.0)
        .collect();
    ids.sort_by(|&a, &c| row[c as usize].total_cmp(&row[a as usize]).then(a.cmp(&c)));
    ids.truncate(b);
    ids
}

/// One first-hitting branch of `node`.
///
/// Draw order from the node stream: the event-time uniform, then the masked
/// index. The denoiser is evaluated once at `(node.seq, tau_next)`.
pub fn unmask_branch<D: Denoiser + ?Sized>(
    node: &SearchNode,
    b: usize,
    den: &D,
    sched: &NoiseSchedule,
    rng: &NodeRng,
    ledger: &mut NfeLedger,
) -> Result<Branch> {
    let vocab = den.vocab();
    let masked = node.seq.masked_positions(&vocab);
    let n = masked.len();
    if n == 0 {
        return Err(Error::NoMaskedPositions);
    }
    if b == 0 {
        return Err(Error::domain("beam width must be at least 1"));
    }
    let mut stream = rng.stream(n, &node.seq);
    let tau_next = fhs_next_time(node.tau, n, open_unit(&mut stream), sched)?;
    let index = masked[uniform_index(&mut stream, n)];
    let mu = ledger.eval(den, &node.seq, tau_next)?;
    let tokens = top_tokens(mu.row(index), b, &vocab);
    Ok(Branch {
        index,
        tau_next,
        tokens,
        mu: Arc::new(mu),
    })
}

/// Output of a grouped expansion: `k` distinct positions, each with its
/// own top-`b` tokens, all sharing one event time and one matrix.
#[derive(Debug, Clone)]
pub struct GroupBranch {
    pub tau_next: f64,
    pub mu: Arc<ProbMatrix>,
    pub picks: Vec<(usize, Vec<TokenId>)>,
}

impl GroupBranch {
    pub fn child_count(&self) -> usize {
        self.picks.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Expands `node` at `k` masked positions drawn without replacement. The
/// first position uses the same draw as [`unmask_branch`].
pub fn group_unmask_branch<D: Denoiser + ?Sized>(
    node: &SearchNode,
    k: usize,
    b: usize,
    den: &D,
    sched: &NoiseSchedule,
    rng: &NodeRng,
    ledger: &mut NfeLedger,
) -> Result<GroupBranch> {
    let vocab = den.vocab();
    let mut masked = node.seq.masked_positions(&vocab);
    let n = masked.len();
    if n == 0 {
        return Err(Error::NoMaskedPositions);
    }
    if k == 0 || k > n {
        return Err(Error::domain(format!(
            "cannot unmask {k} groups from {n} masked positions"
        )));
    }
    if b == 0 {
        return Err(Error::domain("beam width must be at least 1"));
    }
    let mut stream = rng.stream(n, &node.seq);
    let tau_next = fhs_next_time(node.tau, n, open_unit(&mut stream), sched)?;
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        chosen.push(masked.remove(uniform_index(&mut stream, masked.len())));
    }
    let mu = ledger.eval(den, &node.seq, tau_next)?;
    let picks = chosen
        .into_iter()
        .map(|pos| (pos, top_tokens(mu.row(pos), b, &vocab)))
        .collect();
    Ok(GroupBranch {
        tau_next,
        mu: Arc::new(mu),
        picks,
    })
}

/// Fills every masked position of `child` with the argmax of its row in
/// `mu` (ties to the lower id) and scores the result.
pub fn resubstitute_score<R: Reward + ?Sized>(
    child: &Sequence,
    mu: &ProbMatrix,
    vocab: &Vocab,
    reward: &R,
) -> Result<f64> {
    reward.score(&resubstitute(child, mu, vocab))
}

pub fn resubstitute(child: &Sequence, mu: &ProbMatrix, vocab: &Vocab) -> Sequence {
    let mut x = child.clone();
    for pos in 0..x.len() {
        if vocab.is_mask(x.get(pos)) {
            x.set(pos, mu.argmax(pos));
        }
    }
    x
}

/// Canonical node order: score descending, then tokens ascending, then
/// event time ascending.
pub fn canonical_order(a: &SearchNode, b: &SearchNode) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.seq.cmp(&b.seq))
        .then_with(|| a.tau.total_cmp(&b.tau))
}

/// Keeps the `m` best nodes under [`canonical_order`], sorted.
pub fn topk_prune(mut pool: Vec<SearchNode>, m: usize) -> Vec<SearchNode> {
    pool.sort_by(canonical_order);
    pool.truncate(m);
    pool
}

/// Pool statistics after expanding one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    /// Masked count of the parents expanded at this level.
    pub level: usize,
    pub parents: usize,
    pub pool: usize,
    pub pool_max: f64,
    pub pool_mean: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Sequence,
    pub best_score: f64,
    pub ledger: NfeLedger,
    /// One entry per level, from `L` down to 1.
    pub trajectory: Vec<LevelStats>,
    /// Sorted keys of the nodes kept after pruning at each level, in the
    /// same order as `trajectory`.
    pub retained: Vec<Vec<NodeKey>>,
}

/// Runs the full search from the all-mask root at `τ = 1`. With one
/// unmasking group each parent is expanded by [`unmask_branch`], otherwise
/// by [`group_unmask_branch`] with `k = min(groups, n)` at level `n`.
pub fn treasure_search<D, R>(
    len: usize,
    den: &D,
    sched: &NoiseSchedule,
    reward: &R,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<SearchOutcome>
where
    D: Denoiser + ?Sized,
    R: Reward + ?Sized,
{
    search(len, den, sched, reward, cfg, seed, cfg.groups > 1)
}

/// Same search, but every expansion goes through [`group_unmask_branch`],
/// including `groups = 1`.
pub fn treasure_search_grouped<D, R>(
    len: usize,
    den: &D,
    sched: &NoiseSchedule,
    reward: &R,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<SearchOutcome>
where
    D: Denoiser + ?Sized,
    R: Reward + ?Sized,
{
    search(len, den, sched, reward, cfg, seed, true)
}

fn search<D, R>(
    len: usize,
    den: &D,
    sched: &NoiseSchedule,
    reward: &R,
    cfg: &SearchConfig,
    seed: u64,
    grouped: bool,
) -> Result<SearchOutcome>
where
    D: Denoiser + ?Sized,
    R: Reward + ?Sized,
{
    if len == 0 {
        return Err(Error::domain("sequence length must be at least 1"));
    }
    cfg.widths.validate(len)?;
    if cfg.groups == 0 {
        return Err(Error::domain("unmasking groups must be at least 1"));
    }
    let vocab = den.vocab();
    let rng = NodeRng::new(seed);
    let mut ledger = NfeLedger::new();
    let mut parents = vec![SearchNode::root(len, &vocab)];
    let mut trajectory = Vec::with_capacity(len);
    let mut retained = Vec::with_capacity(len);

    for n in (1..=len).rev() {
        let b = cfg.widths.beam_at(n);
        let k = grouped.then(|| cfg.groups.min(n));
        let expanded: Vec<Result<(Vec<SearchNode>, NfeLedger)>> = parents
            .par_iter()
            .enumerate()
            .map(|(rank, parent)| {
                let mut local = NfeLedger::new();
                let children = expand(parent, rank, n, k, b, den, sched, reward, cfg.scorer, &rng, &mut local)?;
                Ok((children, local))
            })
            .collect();
        let mut pool = Vec::new();
        for item in expanded {
            let (children, local) = item?;
            ledger.absorb(local);
            pool.extend(children);
        }
        for node in &pool {
            if !node.score.is_finite() {
                return Err(Error::NonFiniteScore {
                    level: n,
                    score: node.score,
                });
            }
        }
        let pool_max = pool.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
        let pool_mean = pool.iter().map(|c| c.score).sum::<f64>() / pool.len() as f64;
        trajectory.push(LevelStats {
            level: n,
            parents: parents.len(),
            pool: pool.len(),
            pool_max,
            pool_mean,
        });
        parents = topk_prune(pool, cfg.widths.tree_at(n));
        let mut keys: Vec<NodeKey> = parents.iter().map(SearchNode::key).collect();
        keys.sort();
        retained.push(keys);
    }

    // Final pick by exact reward; intermediate scores need not be exact under
    // the ablation scorers.
    let mut best: Option<(f64, &SearchNode)> = None;
    for leaf in &parents {
        let r = reward.score(&leaf.seq)?;
        if !r.is_finite() {
            return Err(Error::NonFiniteScore { level: 0, score: r });
        }
        let better = match best {
            None => true,
            Some((s, cur)) => {
                r > s || (r == s && (&leaf.seq, leaf.tau.to_bits()) < (&cur.seq, cur.tau.to_bits()))
            }
        };
        if better {
            best = Some((r, leaf));
        }
    }
    let (best_score, leaf) = best.expect("at least one leaf");
    Ok(SearchOutcome {
        best: leaf.seq.clone(),
        best_score,
        ledger,
        trajectory,
        retained,
    })
}

#[allow(clippy::too_many_arguments)]
fn expand<D, R>(
    parent: &SearchNode,
    rank: usize,
    n: usize,
    k: Option<usize>,
    b: usize,
    den: &D,
    sched: &NoiseSchedule,
    reward: &R,
    scorer: Scorer,
    rng: &NodeRng,
    ledger: &mut NfeLedger,
) -> Result<Vec<SearchNode>>
where
    D: Denoiser + ?Sized,
    R: Reward + ?Sized,
{
    let vocab = den.vocab();
    let g = match k {
        Some(k) => group_unmask_branch(parent, k, b, den, sched, rng, ledger)?,
        None => {
            let br = unmask_branch(parent, b, den, sched, rng, ledger)?;
            GroupBranch {
                tau_next: br.tau_next,
                mu: br.mu,
                picks: vec![(br.index, br.tokens)],
            }
        }
    };
    let mut children = Vec::with_capacity(g.child_count());
    for (pos, tokens) in &g.picks {
        for &tok in tokens {
            let mut child = SearchNode {
                seq: parent.seq.with(*pos, tok),
                tau: g.tau_next,
                score: 0.0,
                parent_mu: Some(Arc::clone(&g.mu)),
                committed: Some((*pos, tok)),
                lineage: Lineage {
                    level: n - 1,
                    parent_rank: rank,
                    branch_rank: children.len(),
                },
            };
            child.score = match scorer {
                Scorer::Resubstitute => resubstitute_score(&child.seq, &g.mu, &vocab, reward)?,
                Scorer::PreviousStep => score_previous_step(&child, &vocab, reward)?,
                Scorer::TruePosterior => score_true_posterior(&child, den, reward, ledger)?,
            };
            children.push(child);
        }
    }
    Ok(children)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdlm::{CountingDenoiser, PlantedDenoiser, RandomTableDenoiser};
    use crate::rewards::{LexiconReward, TargetMatchReward};

    fn node(seq: Vec<u32>, tau: f64, score: f64) -> SearchNode {
        SearchNode {
            seq: Sequence::from(seq),
            tau,
            score,
            parent_mu: None,
            committed: None,
            lineage: Lineage {
                level: 0,
                parent_rank: 0,
                branch_rank: 0,
            },
        }
    }

    #[test]
    fn top_tokens_order_and_cap() {
        let v = Vocab::new(4).unwrap();
        assert_eq!(top_tokens(&[0.5, 0.3, 0.2, 0.0], 3, &v), vec![0, 1, 2]);
        assert_eq!(top_tokens(&[0.2, 0.3, 0.5, 0.0], 10, &v), vec![2, 1, 0]);
        assert_eq!(top_tokens(&[0.4, 0.2, 0.4, 0.0], 2, &v), vec![0, 2]);
        assert_eq!(top_tokens(&[0.0, 1.0, 0.0, 0.0], 5, &v), vec![1]);
    }

    #[test]
    fn unmask_branch_planted_and_cap() {
        let v = Vocab::new(4).unwrap();
        let target = Sequence::from(vec![2, 0, 1]);
        let den = PlantedDenoiser::new(target.clone(), 0.0, v).unwrap();
        let root = SearchNode::root(3, &v);
        let mut ledger = NfeLedger::new();
        let br = unmask_branch(&root, 1, &den, &NoiseSchedule::Linear, &NodeRng::new(1), &mut ledger).unwrap();
        assert_eq!(br.tokens, vec![target.get(br.index)]);
        assert_eq!(ledger.evals(), 1);

        let den = PlantedDenoiser::new(target, 0.3, v).unwrap();
        let br = unmask_branch(&root, 10, &den, &NoiseSchedule::Linear, &NodeRng::new(1), &mut ledger).unwrap();
        assert_eq!(br.tokens.len(), 3);
        assert!(br.tau_next < 1.0);
    }

    #[test]
    fn unmask_branch_rejects_full_node() {
        let v = Vocab::new(3).unwrap();
        let den = RandomTableDenoiser::new(1, 1.0, v).unwrap();
        let full = node(vec![0, 1], 0.5, 0.0);
        let mut ledger = NfeLedger::new();
        assert!(unmask_branch(&full, 2, &den, &NoiseSchedule::Linear, &NodeRng::new(0), &mut ledger).is_err());
        assert_eq!(ledger.evals(), 0);
    }

    #[test]
    fn group_k1_matches_unmask_branch() {
        let v = Vocab::new(6).unwrap();
        let den = RandomTableDenoiser::new(4, 0.6, v).unwrap();
        let root = SearchNode::root(7, &v);
        let rng = NodeRng::new(99);
        let mut ledger = NfeLedger::new();
        let a = unmask_branch(&root, 3, &den, &NoiseSchedule::Linear, &rng, &mut ledger).unwrap();
        let g = group_unmask_branch(&root, 1, 3, &den, &NoiseSchedule::Linear, &rng, &mut ledger).unwrap();
        assert_eq!(g.tau_next.to_bits(), a.tau_next.to_bits());
        assert_eq!(g.picks, vec![(a.index, a.tokens.clone())]);

        let g = group_unmask_branch(&root, 2, 5, &den, &NoiseSchedule::Linear, &rng, &mut ledger).unwrap();
        assert!(g.child_count() <= 10);
        assert_eq!(g.picks[0].0, a.index);
        assert_ne!(g.picks[0].0, g.picks[1].0);
        assert!(group_unmask_branch(&root, 8, 1, &den, &NoiseSchedule::Linear, &rng, &mut ledger).is_err());
    }

    #[test]
    fn resubstitution_examples() {
        let v = Vocab::new(3).unwrap();
        let r = TargetMatchReward::new(Sequence::from(vec![0, 1, 0]));
        let mu = ProbMatrix::from_rows(
            3,
            3,
            vec![1.0, 0.0, 0.0, 0.2, 0.8, 0.0, 0.6, 0.4, 0.0],
        )
        .unwrap();
        let child = Sequence::from(vec![0, 2, 2]);
        assert_eq!(resubstitute_score(&child, &mu, &v, &r).unwrap(), 3.0);
        let full = Sequence::from(vec![1, 1, 1]);
        assert_eq!(resubstitute_score(&full, &mu, &v, &r).unwrap(), r.score(&full).unwrap());
    }

    #[test]
    fn prune_examples() {
        let pool = vec![node(vec![0], 0.1, 3.0), node(vec![1], 0.1, 1.0), node(vec![2], 0.1, 2.0)];
        let kept = topk_prune(pool.clone(), 2);
        assert_eq!(kept.iter().map(|n| n.score).collect::<Vec<_>>(), vec![3.0, 2.0]);
        assert_eq!(topk_prune(pool, 10).len(), 3);

        let tie = vec![node(vec![1, 0], 0.2, 1.0), node(vec![0, 1], 0.3, 1.0), node(vec![0, 1], 0.1, 1.0)];
        let kept = topk_prune(tie, 3);
        assert_eq!(kept[0].seq.tokens(), &[0, 1]);
        assert_eq!(kept[0].tau, 0.1);
        assert_eq!(kept[2].seq.tokens(), &[1, 0]);
    }

    #[test]
    fn planted_exact_target_is_found() {
        let v = Vocab::new(5).unwrap();
        let target = Sequence::from(vec![3, 1, 0, 2, 2, 1]);
        let den = PlantedDenoiser::new(target.clone(), 0.0, v).unwrap();
        let r = TargetMatchReward::new(target.clone());
        let out = treasure_search(6, &den, &NoiseSchedule::Linear, &r, &SearchConfig::new(WidthSchedule::constant(2, 3)), 5).unwrap();
        assert_eq!(out.best, target);
        assert_eq!(out.best_score, 6.0);
        assert!(out.trajectory.iter().all(|s| s.pool_max == 6.0));
    }

    fn nfe_closed_form(len: usize, b: usize, m: usize, real: usize) -> u64 {
        let mut parents = 1usize;
        let mut total = 0;
        for _ in 0..len {
            total += parents as u64;
            parents = (parents * b.min(real)).min(m);
        }
        total
    }

    #[test]
    fn ledger_matches_counter_and_closed_form() {
        let v = Vocab::new(5).unwrap();
        let den = CountingDenoiser::new(RandomTableDenoiser::new(2, 1.0, v).unwrap());
        let r = LexiconReward::new(vec![1.0, -1.0, 0.5, 2.0, 0.0]).unwrap();
        for (b, m) in [(1, 1), (2, 3), (5, 2), (3, 8)] {
            den.reset();
            let out = treasure_search(9, &den, &NoiseSchedule::Linear, &r, &SearchConfig::new(WidthSchedule::constant(b, m)), 3).unwrap();
            assert_eq!(out.ledger.evals(), den.calls());
            assert_eq!(out.ledger.evals(), nfe_closed_form(9, b, m, 4));
        }
    }

    #[test]
    fn greedy_tree_follows_fhs_draws() {
        // b = m = 1: event times and positions follow the node streams; the
        // token is the argmax of the row.
        let v = Vocab::new(6).unwrap();
        let den = RandomTableDenoiser::new(8, 0.5, v).unwrap();
        let r = LexiconReward::new(vec![0.3, 0.1, 0.9, 0.4, 0.2, 0.0]).unwrap();
        let sched = NoiseSchedule::Linear;
        let out = treasure_search(5, &den, &sched, &r, &SearchConfig::new(WidthSchedule::constant(1, 1)), 21).unwrap();
        let rng = NodeRng::new(21);
        let mut z = Sequence::all_mask(5, &v);
        let mut tau = 1.0;
        for n in (1..=5).rev() {
            let mut stream = rng.stream(n, &z);
            let tau_next = fhs_next_time(tau, n, open_unit(&mut stream), &sched).unwrap();
            let masked = z.masked_positions(&v);
            let pos = masked[uniform_index(&mut stream, masked.len())];
            let mu = den.eval(&z, tau_next).unwrap();
            z.set(pos, mu.argmax(pos));
            tau = tau_next;
        }
        assert_eq!(out.best, z);
    }

    #[test]
    fn same_result_on_any_thread_count() {
        let v = Vocab::new(7).unwrap();
        let den = RandomTableDenoiser::new(13, 0.4, v).unwrap();
        let r = LexiconReward::new(vec![0.5, -0.2, 1.1, 0.0, 0.7, -0.9, 0.0]).unwrap();
        let cfg = SearchConfig::new(WidthSchedule::constant(3, 6));
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| treasure_search(12, &den, &NoiseSchedule::Linear, &r, &cfg, 77).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.best, b.best);
        assert_eq!(a.best_score.to_bits(), b.best_score.to_bits());
        assert_eq!(a.retained, b.retained);
    }

    #[test]
    fn children_of_one_parent_differ() {
        let v = Vocab::new(8).unwrap();
        let den = RandomTableDenoiser::new(2, 1.0, v).unwrap();
        let r = LexiconReward::new(vec![0.0; 8]).unwrap();
        let root = SearchNode::root(4, &v);
        let mut ledger = NfeLedger::new();
        let kids = expand(&root, 0, 4, None, 5, &den, &NoiseSchedule::Linear, &r, Scorer::Resubstitute, &NodeRng::new(3), &mut ledger).unwrap();
        assert_eq!(kids.len(), 5);
        for i in 0..kids.len() {
            for j in i + 1..kids.len() {
                assert_ne!(kids[i].committed.unwrap().1, kids[j].committed.unwrap().1);
            }
        }
    }

    #[test]
    fn width_validation() {
        assert!(WidthSchedule::constant(0, 1).validate(3).is_err());
        let per = WidthSchedule {
            beam: LevelWidth::PerLevel(vec![1, 2]),
            tree: LevelWidth::Constant(2),
        };
        assert!(per.validate(3).is_err());
        assert!(per.validate(2).is_ok());
        assert_eq!(per.beam_at(2), 2);
    }
}
