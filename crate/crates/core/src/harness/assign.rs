//! Balanced assignment of participants to conditions.
//!
//! The objective is lexicographic: group-size spread, then the largest
//! per-gender count spread, then the spread of group mean ages. Small
//! instances are solved exactly; larger ones by a greedy seed followed by
//! best-improvement pairwise swaps.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest search space enumerated exhaustively.
const EXACT_LIMIT: f64 = 200_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub age: f64,
    pub gender: String,
}

pub fn read_participants<R: Read>(reader: R) -> Result<Vec<Participant>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != ["id", "age", "gender"] {
        return Err(invalid(format!("participants header must be id,age,gender, got {}", header.join(","))));
    }
    let rows: Vec<Participant> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    for p in &rows {
        if !p.age.is_finite() {
            return Err(invalid(format!("participant {}: age must be finite", p.id)));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Balance {
    pub size_spread: usize,
    pub gender_spread: usize,
    pub age_spread: f64,
}

impl Balance {
    fn cmp(&self, other: &Self) -> Ordering {
        self.size_spread
            .cmp(&other.size_spread)
            .then(self.gender_spread.cmp(&other.gender_spread))
            .then(self.age_spread.total_cmp(&other.age_spread))
    }
}

struct Problem {
    k: usize,
    ages: Vec<f64>,
    genders: Vec<usize>,
    n_genders: usize,
}

impl Problem {
    fn new(participants: &[Participant], k: usize) -> Self {
        let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
        for p in participants {
            let next = labels.len();
            labels.entry(p.gender.as_str()).or_insert(next);
        }
        Self {
            k,
            ages: participants.iter().map(|p| p.age).collect(),
            genders: participants.iter().map(|p| labels[p.gender.as_str()]).collect(),
            n_genders: labels.len(),
        }
    }

    fn balance(&self, groups: &[usize]) -> Balance {
        let mut sizes = vec![0usize; self.k];
        let mut age_sum = vec![0.0f64; self.k];
        let mut gender = vec![vec![0usize; self.k]; self.n_genders];
        for (i, &g) in groups.iter().enumerate() {
            sizes[g] += 1;
            age_sum[g] += self.ages[i];
            gender[self.genders[i]][g] += 1;
        }
        let spread = |v: &[usize]| v.iter().max().unwrap_or(&0) - v.iter().min().unwrap_or(&0);
        let means: Vec<f64> =
            (0..self.k).filter(|&g| sizes[g] > 0).map(|g| age_sum[g] / sizes[g] as f64).collect();
        let age_spread = if means.is_empty() {
            0.0
        } else {
            means.iter().copied().fold(f64::NEG_INFINITY, f64::max) - means.iter().copied().fold(f64::INFINITY, f64::min)
        };
        Balance {
            size_spread: spread(&sizes),
            gender_spread: gender.iter().map(|g| spread(g)).max().unwrap_or(0),
            age_spread,
        }
    }

    fn exact(&self) -> Vec<usize> {
        let n = self.ages.len();
        let mut current = vec![0usize; n];
        let mut best = current.clone();
        let mut best_score = self.balance(&current);
        loop {
            // Odometer increment over k^n assignments.
            let mut i = 0;
            while i < n {
                current[i] += 1;
                if current[i] < self.k {
                    break;
                }
                current[i] = 0;
                i += 1;
            }
            if i == n {
                return best;
            }
            let score = self.balance(&current);
            if score.cmp(&best_score) == Ordering::Less {
                best_score = score;
                best.clone_from(&current);
            }
        }
    }

    fn greedy(&self) -> Vec<usize> {
        let n = self.ages.len();
        let capacity: Vec<usize> = (0..self.k).map(|g| n / self.k + usize::from(g < n % self.k)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.genders[a].cmp(&self.genders[b]).then(self.ages[b].total_cmp(&self.ages[a])));
        let mut sizes = vec![0usize; self.k];
        let mut age_sum = vec![0.0f64; self.k];
        let mut gender = vec![vec![0usize; self.k]; self.n_genders];
        let mut groups = vec![0usize; n];
        for i in order {
            let g = (0..self.k)
                .filter(|&g| sizes[g] < capacity[g])
                .min_by(|&a, &b| {
                    gender[self.genders[i]][a]
                        .cmp(&gender[self.genders[i]][b])
                        .then(age_sum[a].total_cmp(&age_sum[b]))
                        .then(a.cmp(&b))
                })
                .expect("capacity covers every participant");
            groups[i] = g;
            sizes[g] += 1;
            age_sum[g] += self.ages[i];
            gender[self.genders[i]][g] += 1;
        }
        groups
    }

    fn improve(&self, mut groups: Vec<usize>) -> Vec<usize> {
        let n = groups.len();
        let mut score = self.balance(&groups);
        loop {
            let mut best: Option<(usize, usize, Balance)> = None;
            for a in 0..n {
                for b in a + 1..n {
                    if groups[a] == groups[b] {
                        continue;
                    }
                    groups.swap(a, b);
                    let s = self.balance(&groups);
                    groups.swap(a, b);
                    let target = best.map_or(score, |(_, _, s)| s);
                    if s.cmp(&target) == Ordering::Less {
                        best = Some((a, b, s));
                    }
                }
            }
            match best {
                Some((a, b, s)) => {
                    groups.swap(a, b);
                    score = s;
                }
                None => return groups,
            }
        }
    }
}

/// Group index (0..k) for each participant, in input order.
pub fn assign_conditions(participants: &[Participant], k: usize) -> Result<Vec<usize>> {
    if participants.is_empty() {
        return Err(Error::InsufficientData("no participants to assign".into()));
    }
    if k < 2 {
        return Err(invalid(format!("need at least two conditions, got {k}")));
    }
    let problem = Problem::new(participants, k);
    if (k as f64).powi(participants.len() as i32) <= EXACT_LIMIT {
        return Ok(problem.exact());
    }
    Ok(problem.improve(problem.greedy()))
}

pub fn balance(participants: &[Participant], groups: &[usize], k: usize) -> Result<Balance> {
    if groups.len() != participants.len() || groups.iter().any(|&g| g >= k) {
        return Err(invalid("assignment does not match the participants"));
    }
    Ok(Problem::new(participants, k).balance(groups))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn people(ages: &[f64], genders: &[&str]) -> Vec<Participant> {
        ages.iter()
            .zip(genders.iter().cycle())
            .enumerate()
            .map(|(i, (&age, g))| Participant { id: format!("p{i}"), age, gender: (*g).to_owned() })
            .collect()
    }

    #[test]
    fn fifty_one_split_evenly() {
        let ages: Vec<f64> = (0..51).map(|i| 19.0 + ((i * 37) % 23) as f64).collect();
        let ps = people(&ages, &["f", "m", "f", "d", "m"]);
        let groups = assign_conditions(&ps, 3).unwrap();
        let mut sizes = [0; 3];
        for g in &groups {
            sizes[*g] += 1;
        }
        assert_eq!(sizes, [17, 17, 17]);
        let b = balance(&ps, &groups, 3).unwrap();
        assert!(b.gender_spread <= 1);
        assert!(b.age_spread < 1.0, "{b:?}");
    }

    #[test]
    fn identical_people_only_need_sizes() {
        let ps = people(&[30.0; 10], &["x"]);
        let groups = assign_conditions(&ps, 3).unwrap();
        assert_eq!(balance(&ps, &groups, 3).unwrap().size_spread, 1);
    }

    #[test]
    fn rejects_empty_and_single_condition() {
        assert!(assign_conditions(&[], 3).is_err());
        assert!(assign_conditions(&people(&[1.0], &["x"]), 1).is_err());
    }

    #[test]
    fn participants_csv() {
        let ps = read_participants("id,age,gender\na,23,f\nb,31,m\n".as_bytes()).unwrap();
        assert_eq!(ps[1], Participant { id: "b".into(), age: 31.0, gender: "m".into() });
        assert!(read_participants("name,age\n".as_bytes()).is_err());
    }
}
