//! Graph analytics command: algebraic connectivity, spectral quantities,
//! mixing-time bounds, and the visiting-probability lower bound.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use mtcd_core::graph::{build_topology, rho_bound, walk_analytics, RhoBranch};

use crate::config::ExperimentConfig;
use crate::runner::CliError;

pub fn cmd_analyze_graph(
    config: ExperimentConfig,
    out: Option<PathBuf>,
    edges_out: Option<PathBuf>,
    eps: Option<f64>,
) -> Result<(), CliError> {
    let graph = build_topology(config.topology(), config.graph.clients)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let hops = config.algorithm.hops_per_sync;
    let analytics = walk_analytics(&graph, None).map_err(|e| CliError::Runtime(e.to_string()))?;
    // Default accuracy for the exact mixing time: half the stationary floor.
    let eps = eps.unwrap_or(analytics.pi_min / 2.0);
    let analytics =
        walk_analytics(&graph, Some(eps)).map_err(|e| CliError::Runtime(e.to_string()))?;
    let rho = rho_bound(&graph, hops).map_err(|e| CliError::Runtime(e.to_string()))?;
    let branch = match rho.branch {
        RhoBranch::PathProduct => "path_product",
        RhoBranch::Mixing => "mixing",
    };

    println!("clients                 {}", graph.num_clients());
    println!("edges                   {}", graph.edge_count());
    if let Some(attempts) = graph.resample_attempts() {
        println!("resample_attempts       {attempts}");
    }
    match analytics.algebraic_connectivity {
        Some(a) => println!("algebraic_connectivity  {a:.6}"),
        None => println!("algebraic_connectivity  n/a (single node)"),
    }
    println!("lambda2                 {:.6}", analytics.lambda2);
    println!("spectral_gap            {:.6}", analytics.spectral_gap);
    println!("pi_min                  {:.6}", analytics.pi_min);
    println!("tau_bound               {:.4}", analytics.tau_bound);
    match analytics.tau_exact {
        Some(t) => println!("tau_exact(eps={eps:.4})   {t}"),
        None => println!("tau_exact               n/a (graph above dense-power limit)"),
    }
    println!("rho(S={hops})                {:.6e} [{branch}]", rho.value);

    if let Some(path) = out {
        let mut f = fs::File::create(&path)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        writeln!(
            f,
            "clients,edges,algebraic_connectivity,lambda2,spectral_gap,pi_min,tau_bound,tau_exact,eps,s_hops,rho,rho_branch"
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(
            f,
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{},{:.16e},{}",
            graph.num_clients(),
            graph.edge_count(),
            analytics
                .algebraic_connectivity
                .map(|a| format!("{a:.16e}"))
                .unwrap_or_default(),
            analytics.lambda2,
            analytics.spectral_gap,
            analytics.pi_min,
            analytics.tau_bound,
            analytics
                .tau_exact
                .map(|t| t.to_string())
                .unwrap_or_default(),
            eps,
            hops,
            rho.value,
            branch
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = edges_out {
        let mut f = fs::File::create(&path)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        graph
            .export_edge_list(&mut f)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
