//! Finite-difference gradient verification over every parameter group of
//! the configured model.

use super::{init_model, write_csv};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gradcheck::{check_params, DEFAULT_TOL};
use crate::rng::Rng;
use crate::tensor::Tensor;
use std::path::Path;

pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<()> {
    let num_classes = cfg.get_usize("num_classes", 4)?;
    let (model, seed) = init_model(cfg, num_classes)?;
    let directions = cfg.get_usize("gradcheck_directions", 2)?;

    let side = model.cfg.image_size;
    let mut rng = Rng::new(seed).derive("gradcheck.input");
    let image = Tensor::from_vec(
        (0..side * side).map(|_| rng.uniform()).collect(),
        &[side, side, 1],
    )?;
    let out_dim = if num_classes == 0 {
        model.cfg.embed_dim
    } else {
        num_classes
    };
    let probe = Tensor::from_vec(
        (0..out_dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        &[1, out_dim],
    )?;

    let params = model.named_params();
    let loss_fn = {
        let image = image.clone();
        let probe = probe.clone();
        move || {
            // weighted sum of the head output exercises every parameter
            let fwd = model.forward_image(&image)?;
            fwd.output.mul(&probe)?.sum(None)
        }
    };
    let mut dir_rng = Rng::new(seed).derive("gradcheck.directions");
    let report = check_params(&params, &loss_fn, directions, DEFAULT_TOL, &mut dir_rng)?;

    let mut rows = Vec::with_capacity(report.groups.len());
    for g in &report.groups {
        let status = if g.pass { "PASS" } else { "FAIL" };
        println!("{status}  {:<40} max_rel_err = {:.3e}", g.name, g.max_rel_err);
        rows.push(format!("{},{},{status}", g.name, g.max_rel_err));
    }
    write_csv(&out.join("gradcheck.csv"), "group,max_rel_err,status", &rows)?;
    if report.all_pass() {
        println!("gradcheck: all {} parameter groups PASS", report.groups.len());
        Ok(())
    } else {
        let failed = report.groups.iter().filter(|g| !g.pass).count();
        Err(Error::Autograd(format!(
            "gradcheck: {failed} parameter group(s) failed"
        )))
    }
}
