//! Network design: the operator picks link capacities `x`, passengers pick
//! the share `y^{od}` using the new network and its link shares `y^{od}_{ij}`.
//!
//! Per OD pair only links lying on some simple `o → d` path carry a share
//! variable. The lower level is a logit-type choice with entropy on `y^{od}`
//! plus a small Tikhonov term so that it is strongly convex in every share.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::problem::{
    BilevelProblem, Bounds, Evaluation, LinearCoupledConstraint, RowKind, SmoothnessConstants,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub time: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdPair {
    pub origin: usize,
    pub dest: usize,
    pub demand: f64,
    pub revenue: f64,
    pub ext_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportNetwork {
    pub stations: usize,
    pub links: Vec<Link>,
    pub od_pairs: Vec<OdPair>,
    /// Weight of travel time in passenger utility; negative.
    pub omega_t: f64,
    pub eps: f64,
    pub kappa: f64,
}

impl TransportNetwork {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_t < 0.0) {
            return Err(Error::invalid("omega_t must be negative"));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::invalid("eps must lie in (0, 0.5)"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::invalid("kappa must be positive"));
        }
        for l in &self.links {
            if l.from >= self.stations || l.to >= self.stations || l.from == l.to {
                return Err(Error::invalid(format!("bad link {} -> {}", l.from, l.to)));
            }
            if !(l.time >= 0.0 && l.cost >= 0.0) {
                return Err(Error::invalid("link times and costs must be nonnegative"));
            }
        }
        for od in &self.od_pairs {
            if od.origin >= self.stations || od.dest >= self.stations || od.origin == od.dest {
                return Err(Error::invalid(format!("bad OD pair {} -> {}", od.origin, od.dest)));
            }
            if !(od.demand >= 0.0 && od.revenue >= 0.0 && od.ext_time >= 0.0) {
                return Err(Error::invalid("demands, revenues and times must be nonnegative"));
            }
        }
        if self.links.is_empty() || self.od_pairs.is_empty() {
            return Err(Error::invalid("network needs links and OD pairs"));
        }
        Ok(())
    }

    /// The three-station network used by the benchmarks.
    pub fn three_node() -> Self {
        let link = |from, to, time, cost| Link {
            from,
            to,
            time,
            cost,
        };
        let od = |origin, dest, demand, revenue, ext_time| OdPair {
            origin,
            dest,
            demand,
            revenue,
            ext_time,
        };
        TransportNetwork {
            stations: 3,
            links: vec![
                link(0, 1, 1.0, 0.4),
                link(1, 2, 1.0, 0.4),
                link(0, 2, 1.5, 0.6),
            ],
            od_pairs: vec![od(0, 2, 0.5, 3.0, 3.0), od(0, 1, 0.4, 2.0, 2.0), od(1, 2, 0.4, 2.0, 2.0)],
            omega_t: -1.0,
            eps: 0.01,
            kappa: 1e-2,
        }
    }

    /// Sections `STATIONS`, `LINKS` (`i j t c`), `OD` (`o d w m t_ext`) and
    /// `PARAMS` (`omega_t`, `eps`, `kappa` as `key value`). `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut section = "";
        let mut stations = None;
        let mut links = Vec::new();
        let mut od_pairs = Vec::new();
        let (mut omega_t, mut eps, mut kappa) = (None, None, 1e-2);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if matches!(line, "STATIONS" | "LINKS" | "OD" | "PARAMS") {
                section = match line {
                    "STATIONS" => "STATIONS",
                    "LINKS" => "LINKS",
                    "OD" => "OD",
                    _ => "PARAMS",
                };
                continue;
            }
            let err = |m: &str| Error::invalid(format!("network line {}: {m}", n + 1));
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                toks.get(i)
                    .ok_or_else(|| err("missing field"))?
                    .parse::<f64>()
                    .map_err(|e| err(&e.to_string()))
            };
            let idx = |i: usize| -> Result<usize> {
                toks.get(i)
                    .ok_or_else(|| err("missing field"))?
                    .parse::<usize>()
                    .map_err(|e| err(&e.to_string()))
            };
            match section {
                "STATIONS" => stations = Some(idx(0)?),
                "LINKS" => {
                    if toks.len() != 4 {
                        return Err(err("expected `i j t c`"));
                    }
                    links.push(Link {
                        from: idx(0)?,
                        to: idx(1)?,
                        time: num(2)?,
                        cost: num(3)?,
                    });
                }
                "OD" => {
                    if toks.len() != 5 {
                        return Err(err("expected `o d w m t_ext`"));
                    }
                    od_pairs.push(OdPair {
                        origin: idx(0)?,
                        dest: idx(1)?,
                        demand: num(2)?,
                        revenue: num(3)?,
                        ext_time: num(4)?,
                    });
                }
                "PARAMS" => match toks.first().copied() {
                    Some("omega_t") => omega_t = Some(num(1)?),
                    Some("eps") => eps = Some(num(1)?),
                    Some("kappa") => kappa = num(1)?,
                    Some(k) => return Err(err(&format!("unknown parameter `{k}`"))),
                    None => {}
                },
                _ => return Err(err("data before any section header")),
            }
        }
        let net = TransportNetwork {
            stations: stations.ok_or_else(|| Error::invalid("missing STATIONS section"))?,
            links,
            od_pairs,
            omega_t: omega_t.ok_or_else(|| Error::invalid("missing omega_t"))?,
            eps: eps.ok_or_else(|| Error::invalid("missing eps"))?,
            kappa,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Links on at least one simple `o → d` path, in link order.
    fn usable_links(&self, o: usize, d: usize) -> Vec<usize> {
        let mut used = BTreeSet::new();
        let mut path = Vec::new();
        let mut visited = vec![false; self.stations];
        self.dfs(o, d, &mut visited, &mut path, &mut used);
        used.into_iter().collect()
    }

    fn dfs(
        &self,
        at: usize,
        d: usize,
        visited: &mut [bool],
        path: &mut Vec<usize>,
        used: &mut BTreeSet<usize>,
    ) {
        if at == d {
            used.extend(path.iter().copied());
            return;
        }
        visited[at] = true;
        for (k, l) in self.links.iter().enumerate() {
            if l.from == at && !visited[l.to] {
                path.push(k);
                self.dfs(l.to, d, visited, path, used);
                path.pop();
            }
        }
        visited[at] = false;
    }
}

/// Index layout of `y`: per OD pair, `y^{od}` followed by its link shares.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportLayout {
    /// Position of `y^{od}` for each OD pair.
    pub od_index: Vec<usize>,
    /// `(od, link, position)` for every link share.
    pub link_index: Vec<(usize, usize, usize)>,
    pub dy: usize,
}

/// The built problem together with its layout.
#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub problem: BilevelProblem,
    pub layout: TransportLayout,
    pub network: TransportNetwork,
}

impl TransportProblem {
    /// Operator profit `Σ m y^{od} − Σ c x` with `y` clamped into its box.
    pub fn utility(&self, x: &[f64], y: &[f64]) -> f64 {
        let y = self.problem.clamp_y(y);
        let rev: f64 = self
            .network
            .od_pairs
            .iter()
            .zip(&self.layout.od_index)
            .map(|(od, &k)| od.revenue * y[k])
            .sum();
        let cost: f64 = self.network.links.iter().zip(x).map(|(l, xi)| l.cost * xi).sum();
        rev - cost
    }
}

fn entropy(y: f64) -> (f64, f64) {
    (
        y * (y.ln() - 1.0) + (1.0 - y) * ((1.0 - y).ln() - 1.0),
        (y / (1.0 - y)).ln(),
    )
}

pub fn build_transport(net: &TransportNetwork) -> Result<TransportProblem> {
    net.validate()?;
    let mut od_index = Vec::new();
    let mut link_index = Vec::new();
    let mut dy = 0;
    for (k, od) in net.od_pairs.iter().enumerate() {
        let usable = net.usable_links(od.origin, od.dest);
        if usable.is_empty() {
            return Err(Error::invalid(format!(
                "OD pair ({}, {}) is disconnected",
                od.origin, od.dest
            )));
        }
        od_index.push(dy);
        dy += 1;
        for l in usable {
            link_index.push((k, l, dy));
            dy += 1;
        }
    }
    let dx = net.links.len();

    // Flow conservation per (OD, station touched by that OD), then capacity per link.
    let mut a_rows = Vec::new();
    let mut kinds = Vec::new();
    for (k, od) in net.od_pairs.iter().enumerate() {
        for s in 0..net.stations {
            let mut row = vec![0.0; dy];
            let mut touched = false;
            for &(kk, l, pos) in &link_index {
                if kk != k {
                    continue;
                }
                let link = net.links[l];
                if link.from == s {
                    row[pos] += 1.0;
                    touched = true;
                }
                if link.to == s {
                    row[pos] -= 1.0;
                    touched = true;
                }
            }
            if s == od.origin {
                row[od_index[k]] -= 1.0;
            } else if s == od.dest {
                row[od_index[k]] += 1.0;
            }
            if touched {
                a_rows.push(row);
                kinds.push(RowKind::Equality);
            }
        }
    }
    let n_eq = a_rows.len();
    for l in 0..dx {
        let mut row = vec![0.0; dy];
        for &(k, ll, pos) in &link_index {
            if ll == l {
                row[pos] = net.od_pairs[k].demand;
            }
        }
        a_rows.push(row);
        kinds.push(RowKind::Inequality);
    }
    let dh = a_rows.len();
    let mut b = DenseMatrix::zeros(dh, dx);
    for l in 0..dx {
        b[(n_eq + l, l)] = -1.0;
    }
    let constraint =
        LinearCoupledConstraint::new(DenseMatrix::from_rows(&a_rows)?, b, DenseVector::zeros(dh), kinds)?;

    let link_costs: Vec<f64> = net.links.iter().map(|l| l.cost).collect();
    let mut grad_y_f = vec![0.0; dy];
    for (od, &k) in net.od_pairs.iter().zip(&od_index) {
        grad_y_f[k] = -od.revenue;
    }
    let gy_f = grad_y_f.clone();
    let f = Arc::new(move |x: &[f64], y: &[f64]| Evaluation {
        value: linalg::dot(&link_costs, x) + linalg::dot(&gy_f, y),
        grad_x: link_costs.clone(),
        grad_y: gy_f.clone(),
    });

    // Linear part of g: −ω w t on link shares, +ω w t_ext on y^{od}.
    let mut lin = vec![0.0; dy];
    let mut constant = 0.0;
    for &(k, l, pos) in &link_index {
        lin[pos] = -net.omega_t * net.od_pairs[k].demand * net.links[l].time;
    }
    for (od, &k) in net.od_pairs.iter().zip(&od_index) {
        lin[k] = net.omega_t * od.demand * od.ext_time;
        constant -= net.omega_t * od.demand * od.ext_time;
    }
    let demands: Vec<(usize, f64)> = net
        .od_pairs
        .iter()
        .zip(&od_index)
        .map(|(od, &k)| (k, od.demand))
        .collect();
    let kappa = net.kappa;
    let g = Arc::new(move |x: &[f64], y: &[f64]| {
        let mut value = constant + linalg::dot(&lin, y) + 0.5 * kappa * linalg::dot(y, y);
        let mut grad_y: Vec<f64> = lin.iter().zip(y).map(|(c, yi)| c + kappa * yi).collect();
        for &(k, w) in &demands {
            let (e, de) = entropy(y[k]);
            value += w * e;
            grad_y[k] += w * de;
        }
        Evaluation {
            value,
            grad_x: vec![0.0; x.len()],
            grad_y,
        }
    });

    let w_max = net.od_pairs.iter().map(|o| o.demand).fold(0.0, f64::max);
    let mu_g = kappa;
    let l_g1 = w_max / (net.eps * (1.0 - net.eps)) + kappa;
    let l_f0 = linalg::norm(&grad_y_f).hypot(net.links.iter().map(|l| l.cost * l.cost).sum::<f64>().sqrt());
    let constants = SmoothnessConstants {
        mu_g,
        l_f0,
        // ∇f is constant; any positive value bounds its Lipschitz constant.
        l_f1: mu_g / 2.0,
        l_g1,
    };
    let problem = BilevelProblem::new(
        format!("transport(stations={},links={dx},od={})", net.stations, net.od_pairs.len()),
        dx,
        dy,
        f,
        g,
        constraint,
        constants,
    )
    .with_x_box(Bounds::new(vec![0.0; dx], vec![f64::INFINITY; dx])?)
    .with_y_eval_box(Bounds::uniform(dy, net.eps, 1.0 - net.eps)?);
    Ok(TransportProblem {
        problem,
        layout: TransportLayout {
            od_index,
            link_index,
            dy,
        },
        network: net.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_link_network() {
        let net = TransportNetwork {
            stations: 2,
            links: vec![Link {
                from: 0,
                to: 1,
                time: 1.0,
                cost: 1.0,
            }],
            od_pairs: vec![OdPair {
                origin: 0,
                dest: 1,
                demand: 2.0,
                revenue: 1.0,
                ext_time: 2.0,
            }],
            omega_t: -1.0,
            eps: 0.01,
            kappa: 0.01,
        };
        let tp = build_transport(&net).unwrap();
        let c = &tp.problem.constraint;
        assert_eq!(tp.layout.dy, 2);
        // Two conservation rows force the link share to equal y^{od}.
        let h = c.h(&[0.5], &[0.3, 0.3]);
        assert!(h[0].abs() < 1e-15 && h[1].abs() < 1e-15);
        assert!((h[2] - (2.0 * 0.3 - 0.5)).abs() < 1e-15);
        assert!(c.is_equality(0) && c.is_equality(1) && !c.is_equality(2));
    }

    #[test]
    fn entropy_is_stationary_at_half() {
        assert_eq!(entropy(0.5).1, 0.0);
    }

    #[test]
    fn disconnected_pair_is_named() {
        let mut net = TransportNetwork::three_node();
        net.od_pairs[0].origin = 2;
        net.od_pairs[0].dest = 0;
        let err = build_transport(&net).unwrap_err().to_string();
        assert!(err.contains("(2, 0)"), "{err}");
    }

    #[test]
    fn parse_round_trip() {
        let text = "\
STATIONS
3
LINKS
0 1 1.0 0.4
1 2 1.0 0.4
0 2 1.5 0.6
OD
0 2 0.5 3.0 3.0   # long trip
0 1 0.4 2.0 2.0
1 2 0.4 2.0 2.0
PARAMS
omega_t -1.0
eps 0.01
kappa 0.01
";
        assert_eq!(TransportNetwork::parse(text).unwrap(), TransportNetwork::three_node());
        assert!(TransportNetwork::parse("STATIONS\n3\nPARAMS\nfoo 1\n").is_err());
    }
}
