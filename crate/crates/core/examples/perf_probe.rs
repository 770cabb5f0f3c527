use svgd_explore::agents::{build_chain_simulator, dedup_chain_batch, ChainExplorer, ChainExplorerConfig, ChainMethod, ChainRewardMode};
use svgd_explore::envs::{ChainEnv, ReplayBuffer};
use svgd_explore::hypergen::GeneratorConfig;

fn main() {
    let n = 40;
    let mut cfg = ChainExplorerConfig::<f64>::chain_defaults();
    cfg.generator = GeneratorConfig { output_scale: 1.0, ..GeneratorConfig::default() };
    let mut env = ChainEnv::<f64>::new(n, 0).unwrap();
    let mut buffer = ReplayBuffer::new();
    let mut explorer = ChainExplorer::new(ChainMethod::Ours, n, cfg, 0).unwrap();
    explorer.run_random_episode(&mut env, &mut buffer).unwrap();
    for ep in 1..=6 {
        let m = explorer.run_episode(&mut env, &mut buffer).unwrap();
        let last = m.steps.last().unwrap();
        println!("ep {ep}: cov {:.3} loss {:.4}", env.coverage(), last.model_loss);
        // Variance landscape by visit count.
        let models = explorer.bundle().unwrap().sample_ensemble(5, 1000 + ep).unwrap();
        let sim = build_chain_simulator(&models, n, &ChainRewardMode::Variance).unwrap();
        let (_, observed) = dedup_chain_batch(&buffer, n).unwrap();
        let mut seen = vec![];
        let mut unseen = vec![];
        for s in 0..n {
            for a in 0..2 {
                if observed.contains_key(&(s, a)) {
                    seen.push(sim.reward(s, a));
                } else {
                    unseen.push(sim.reward(s, a));
                }
            }
        }
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
        // Frontier = unseen pairs adjacent to the visited range.
        let max_visited = (0..n).rev().find(|&s| (0..2).any(|a| observed.contains_key(&(s, a)))).unwrap_or(0);
        let frontier: Vec<f64> = ((max_visited.saturating_sub(1))..(max_visited + 4).min(n))
            .flat_map(|s| [sim.reward(s, 0), sim.reward(s, 1)]).collect();
        println!("   visited({}) mean var {:.4} | unseen({}) mean var {:.4} | frontier band {:.4} | max state {}",
            seen.len(), mean(&seen), unseen.len(), mean(&unseen), mean(&frontier), max_visited);
    }
}
