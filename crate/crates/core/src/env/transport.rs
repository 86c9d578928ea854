//! Integer rounding of fractional allocations and the surplus/deficit
//! transportation problem.

use crate::tapegrad::Tensor;

/// Rounds `quota` (nonnegative, summing to `total` up to rounding) to
/// integers summing to `total` exactly: floors first, then one extra unit to
/// the largest fractional parts, ties to the lower index.
pub fn largest_remainder(quota: &[f64], total: u64) -> Vec<u64> {
    let mut out: Vec<u64> = quota.iter().map(|&q| q.max(0.0).floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    let frac = |i: usize| quota[i].max(0.0) - quota[i].max(0.0).floor();
    if assigned <= total {
        order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
        for &i in order.iter().cycle().take((total - assigned) as usize) {
            out[i] += 1;
        }
    } else {
        order.sort_by(|&a, &b| frac(a).total_cmp(&frac(b)).then(b.cmp(&a)));
        let mut excess = assigned - total;
        for &i in order.iter().cycle() {
            if excess == 0 {
                break;
            }
            if out[i] > 0 {
                out[i] -= 1;
                excess -= 1;
            }
        }
    }
    out
}

/// Integer apportionment of `seats` proportionally to integer `weights`,
/// exact in integer arithmetic. Requires `Σ weights > 0`.
pub fn apportion(weights: &[u64], seats: u64) -> Vec<u64> {
    let total: u64 = weights.iter().sum();
    debug_assert!(total > 0);
    let seats = seats as u128;
    let total_w = total as u128;
    let mut out: Vec<u64> = weights
        .iter()
        .map(|&w| (seats * w as u128 / total_w) as u64)
        .collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let rem = |i: usize| seats * weights[i] as u128 % total_w;
    order.sort_by(|&a, &b| rem(b).cmp(&rem(a)).then(a.cmp(&b)));
    for &i in order.iter().take((seats as u64 - assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// One shipment of a transportation plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub origin: usize,
    pub destination: usize,
    pub count: u64,
}

/// Min-cost plan moving `current` to `target` (equal totals) with unit cost
/// `cost[i][j]` per vehicle. Solved by successive shortest paths over the
/// bipartite surplus/deficit network. Returns sorted flows and the total cost.
pub fn transport(current: &[u64], target: &[u64], cost: &Tensor<f64>) -> (Vec<Flow>, f64) {
    debug_assert_eq!(current.iter().sum::<u64>(), target.iter().sum::<u64>());
    let surplus: Vec<usize> = (0..current.len()).filter(|&i| current[i] > target[i]).collect();
    let deficit: Vec<usize> = (0..current.len()).filter(|&i| target[i] > current[i]).collect();
    if surplus.is_empty() {
        return (Vec::new(), 0.0);
    }

    let (s, d) = (surplus.len(), deficit.len());
    let source = s + d;
    let sink = source + 1;
    let mut net = FlowNetwork::new(s + d + 2);
    for (a, &i) in surplus.iter().enumerate() {
        net.add_arc(source, a, current[i] - target[i], 0.0);
    }
    let mut middle = Vec::with_capacity(s * d);
    for (a, &i) in surplus.iter().enumerate() {
        for (b, &j) in deficit.iter().enumerate() {
            middle.push((i, j, net.add_arc(a, s + b, u64::MAX, cost.at(i, j))));
        }
    }
    for (b, &j) in deficit.iter().enumerate() {
        net.add_arc(s + b, sink, target[j] - current[j], 0.0);
    }
    net.min_cost_flow(source, sink);

    let mut flows = Vec::new();
    let mut total = 0.0;
    for (origin, destination, arc) in middle {
        let count = net.flow(arc);
        if count > 0 {
            total += count as f64 * cost.at(origin, destination);
            flows.push(Flow {
                origin,
                destination,
                count,
            });
        }
    }
    (flows, total)
}

struct Arc {
    to: usize,
    capacity: u64,
    cost: f64,
}

/// Residual network; arc `2k` is forward, `2k + 1` its reverse.
struct FlowNetwork {
    arcs: Vec<Arc>,
    adjacent: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adjacent: vec![Vec::new(); nodes],
        }
    }

    fn add_arc(&mut self, from: usize, to: usize, capacity: u64, cost: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, capacity, cost });
        self.arcs.push(Arc {
            to: from,
            capacity: 0,
            cost: -cost,
        });
        self.adjacent[from].push(id);
        self.adjacent[to].push(id + 1);
        id
    }

    fn flow(&self, arc: usize) -> u64 {
        self.arcs[arc + 1].capacity
    }

    /// Pushes the maximum flow at minimum cost. Dijkstra on reduced costs with
    /// node potentials; all original costs are nonnegative.
    fn min_cost_flow(&mut self, source: usize, sink: usize) {
        let nodes = self.adjacent.len();
        let mut potential = vec![0.0f64; nodes];
        loop {
            let mut dist = vec![f64::INFINITY; nodes];
            let mut via = vec![usize::MAX; nodes];
            let mut done = vec![false; nodes];
            dist[source] = 0.0;
            loop {
                let next = (0..nodes)
                    .filter(|&v| !done[v] && dist[v].is_finite())
                    .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
                let Some(u) = next else { break };
                done[u] = true;
                for &id in &self.adjacent[u] {
                    let arc = &self.arcs[id];
                    if arc.capacity == 0 || done[arc.to] {
                        continue;
                    }
                    let reduced = (arc.cost + potential[u] - potential[arc.to]).max(0.0);
                    if dist[u] + reduced < dist[arc.to] {
                        dist[arc.to] = dist[u] + reduced;
                        via[arc.to] = id;
                    }
                }
            }
            if !dist[sink].is_finite() {
                return;
            }
            for v in 0..nodes {
                potential[v] += dist[v].min(dist[sink]);
            }

            let mut push = u64::MAX;
            let mut v = sink;
            while v != source {
                let id = via[v];
                push = push.min(self.arcs[id].capacity);
                v = self.arcs[id ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let id = via[v];
                self.arcs[id].capacity -= push;
                self.arcs[id ^ 1].capacity += push;
                v = self.arcs[id ^ 1].to;
            }
        }
    }
}
