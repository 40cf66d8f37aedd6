//! A deterministic stand-in for a seed corpus: thirteen tasks over five domains with
//! unequal sizes, each trajectory a clean tool-use run of 4 to 14 steps.

use rand::Rng;

use crate::rng::unit_rng;
use crate::trajectory::{Action, Domain, Step, ToolDescriptor, Trajectory};

/// Task name, domain and relative size.
pub const TASKS: [(&str, Domain, usize); 13] = [
    ("gsm8k", Domain::Math, 9),
    ("math", Domain::Math, 6),
    ("theoremqa", Domain::Math, 3),
    ("hotpotqa", Domain::Reasoning, 8),
    ("strategyqa", Domain::Reasoning, 4),
    ("mbpp", Domain::Coding, 7),
    ("apps", Domain::Coding, 5),
    ("webshop", Domain::Web, 10),
    ("mind2web", Domain::Web, 6),
    ("miniwob", Domain::Web, 2),
    ("alfworld", Domain::Embodied, 9),
    ("scienceworld", Domain::Embodied, 5),
    ("babyai", Domain::Embodied, 3),
];

fn tools(domain: Domain) -> &'static [(&'static str, &'static str)] {
    match domain {
        Domain::Math => &[("calculate", "calculate(expression)"), ("lookup", "lookup(term)")],
        Domain::Reasoning => &[("search", "search(query)"), ("lookup", "lookup(term)")],
        Domain::Coding => &[("python", "python(code)"), ("run_tests", "run_tests()")],
        Domain::Web => &[("search", "search(query)"), ("click", "click(element)")],
        Domain::Embodied => &[("goto", "goto(place)"), ("take", "take(object)")],
    }
}

/// Splits `total` over the tasks in proportion to their sizes, largest remainder first.
pub fn task_quotas(total: usize) -> Vec<usize> {
    let weight: usize = TASKS.iter().map(|t| t.2).sum();
    let mut quotas: Vec<usize> = TASKS.iter().map(|t| total * t.2 / weight).collect();
    let mut order: Vec<usize> = (0..TASKS.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(total * TASKS[i].2 % weight), i));
    let short = total - quotas.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        quotas[i] += 1;
    }
    quotas
}

pub fn synthetic_seed(task: &str, domain: Domain, index: usize, root_seed: u64) -> Trajectory {
    let id = format!("{task}-{index:05}");
    let mut rng = unit_rng(root_seed, &id);
    let n = rng.gen_range(4..=14);
    let tools = tools(domain);
    let steps = (1..=n)
        .map(|i| {
            let (name, _) = tools[rng.gen_range(0..tools.len())];
            let arg: u32 = rng.gen_range(0..1000);
            Step::new(
                i,
                format!("Step {i} of {task}: I need more about item {arg}."),
                Action::from_raw(format!("{name}(item {arg})")),
                format!("{name} returned record {arg} with value {}.", arg * 7 % 101),
            )
        })
        .collect();
    Trajectory {
        id,
        instruction: format!("Solve {task} problem {index}."),
        available_tools: tools
            .iter()
            .map(|(name, sig)| ToolDescriptor {
                name: name.to_string(),
                signature: sig.to_string(),
            })
            .collect(),
        steps,
        domain,
        task: task.to_string(),
        metadata: Default::default(),
    }
}

/// `total` seeds spread over all thirteen tasks.
pub fn synthetic_seeds(total: usize, root_seed: u64) -> Vec<Trajectory> {
    TASKS
        .iter()
        .zip(task_quotas(total))
        .flat_map(|(&(task, domain, _), q)| {
            (0..q).map(move |i| synthetic_seed(task, domain, i, root_seed))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn quotas_and_coverage() {
        for total in [13, 100, 1000, 1001] {
            assert_eq!(task_quotas(total).iter().sum::<usize>(), total);
        }
        let seeds = synthetic_seeds(200, 1);
        assert_eq!(seeds.len(), 200);
        let domains: BTreeSet<Domain> = seeds.iter().map(|s| s.domain).collect();
        assert_eq!(domains.len(), 5);
        assert!(seeds.iter().all(|s| (4..=14).contains(&s.len()) && s.validate().is_ok()));
        assert_eq!(seeds, synthetic_seeds(200, 1));
    }
}
