//! Reverse pass: replay records backward, accumulating vector-Jacobian
//! products into per-tensor gradient buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

use super::{axis_strides, Graph, OpKind, Record, TensorId};

impl<R: Real> Graph<R> {
    /// Runs reverse-mode differentiation from a scalar loss. Afterwards
    /// every `requires_grad` tensor has a gradient; tensors the loss does
    /// not depend on receive zeros.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let numel = self.numel(loss);
        if numel != 1 {
            return Err(Error::NonScalarLoss { numel });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![R::one()]);

        let records = core::mem::take(&mut self.records);
        for rec in records.iter().rev() {
            self.backward_record(rec);
        }
        self.records = records;

        for idx in 0..self.values.len() {
            if self.requires[idx] && self.grads[idx].is_none() {
                self.grads[idx] = Some(vec![R::zero(); self.values[idx].len()]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, contribution: Vec<R>) {
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e = *e + c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    /// A tensor needs a gradient if it, or anything feeding it, requires one.
    fn wants_grad(&self, id: TensorId) -> bool {
        self.requires[id.0]
    }

    fn backward_record(&mut self, rec: &Record<R>) {
        if !self.requires[rec.output.0] {
            return;
        }
        let g = match self.grads[rec.output.0].clone() {
            Some(g) => g,
            None => return,
        };
        match &rec.op {
            OpKind::Matmul => self.backward_matmul(rec.inputs[0], rec.inputs[1], &g),
            OpKind::Add => {
                for &inp in &rec.inputs {
                    if self.wants_grad(inp) {
                        self.accumulate(inp, g.clone());
                    }
                }
            }
            OpKind::Scale { factor } => {
                if self.wants_grad(rec.inputs[0]) {
                    let c = *factor;
                    self.accumulate(rec.inputs[0], g.iter().map(|&v| v * c).collect());
                }
            }
            OpKind::Relu => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    let dx = self.values[x.0]
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v > R::zero() { gv } else { R::zero() })
                        .collect();
                    self.accumulate(x, dx);
                }
            }
            OpKind::Sigmoid => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    let dx = self.values[rec.output.0]
                        .iter()
                        .zip(&g)
                        .map(|(&y, &gv)| gv * y * (R::one() - y))
                        .collect();
                    self.accumulate(x, dx);
                }
            }
            OpKind::Log => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    let dx = self.values[x.0]
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| gv / v)
                        .collect();
                    self.accumulate(x, dx);
                }
            }
            OpKind::Exp => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    let dx = self.values[rec.output.0]
                        .iter()
                        .zip(&g)
                        .map(|(&y, &gv)| gv * y)
                        .collect();
                    self.accumulate(x, dx);
                }
            }
            OpKind::Sum => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    self.accumulate(x, vec![g[0]; self.values[x.0].len()]);
                }
            }
            OpKind::Mean => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    let n = self.values[x.0].len();
                    let gv = g[0] / R::from_f64(n as f64);
                    self.accumulate(x, vec![gv; n]);
                }
            }
            OpKind::Conv2dSame { kernel, out_keep } => {
                self.backward_conv(rec, *kernel, out_keep.as_deref(), &g)
            }
            OpKind::MaxPoolInterval { n, keep } => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    self.backward_maxpool(x, *n, keep, &g);
                }
            }
            OpKind::LayerNorm { eps } => self.backward_layer_norm(rec, *eps, &g),
            OpKind::L2Normalize { axis, eps } => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    self.backward_l2_normalize(x, *axis, *eps, &g);
                }
            }
            OpKind::MaskedFill { keep, .. } => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    let dx = g
                        .iter()
                        .enumerate()
                        .map(|(idx, &gv)| if keep[idx % keep.len()] { gv } else { R::zero() })
                        .collect();
                    self.accumulate(x, dx);
                }
            }
            OpKind::Reshape { .. } => {
                let x = rec.inputs[0];
                if self.wants_grad(x) {
                    self.accumulate(x, g.clone());
                }
            }
        }
    }

    fn backward_matmul(&mut self, a: TensorId, b: TensorId, g: &[R]) {
        let (m, k) = (self.shapes[a.0][0], self.shapes[a.0][1]);
        let n = self.shapes[b.0][1];
        if self.wants_grad(a) {
            // dA = g @ B^T
            let bv = &self.values[b.0];
            let mut da = vec![R::zero(); m * k];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = R::zero();
                    let brow = &bv[p * n..(p + 1) * n];
                    let grow = &g[i * n..(i + 1) * n];
                    for (&bvv, &gv) in brow.iter().zip(grow) {
                        acc = acc + gv * bvv;
                    }
                    da[i * k + p] = acc;
                }
            }
            self.accumulate(a, da);
        }
        if self.wants_grad(b) {
            // dB = A^T @ g
            let av = &self.values[a.0];
            let mut db = vec![R::zero(); k * n];
            for i in 0..m {
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == R::zero() {
                        continue;
                    }
                    let grow = &g[i * n..(i + 1) * n];
                    let drow = &mut db[p * n..(p + 1) * n];
                    for (d, &gv) in drow.iter_mut().zip(grow) {
                        *d = *d + x * gv;
                    }
                }
            }
            self.accumulate(b, db);
        }
    }

    fn backward_conv(&mut self, rec: &Record<R>, kernel: usize, out_keep: Option<&[bool]>, g: &[R]) {
        let x = rec.inputs[0];
        let w = rec.inputs[1];
        let bias = rec.inputs.get(2).copied();
        let (c_in, h, wid) = {
            let s = &self.shapes[x.0];
            (s[0], s[1], s[2])
        };
        let c_out = self.shapes[w.0][0];
        let pad = kernel / 2;

        if let Some(b) = bias {
            if self.wants_grad(b) {
                let mut db = vec![R::zero(); c_out];
                for (co, dbv) in db.iter_mut().enumerate() {
                    let plane = &g[co * h * wid..(co + 1) * h * wid];
                    match out_keep {
                        Some(keep) => {
                            for (idx, &gv) in plane.iter().enumerate() {
                                if keep[idx] {
                                    *dbv = *dbv + gv;
                                }
                            }
                        }
                        None => *dbv = plane.iter().fold(R::zero(), |a, &v| a + v),
                    }
                }
                self.accumulate(b, db);
            }
        }

        let want_x = self.wants_grad(x);
        let want_w = self.wants_grad(w);
        if !want_x && !want_w {
            return;
        }
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let mut dx = vec![R::zero(); c_in * h * wid];
        let mut dw = vec![R::zero(); c_out * c_in * kernel * kernel];
        match out_keep {
            Some(keep) => {
                // Non-kept outputs are constant zero: no gradient flows
                // through them. Per kept cell: dW[co,:] += g * patch and
                // dpatch = sum_co g * W[co,:], both contiguous.
                let patch_len = c_in * kernel * kernel;
                let k2 = kernel * kernel;
                let mut patch = vec![R::zero(); patch_len];
                let mut dpatch = vec![R::zero(); patch_len];
                for idx in 0..h * wid {
                    if !keep[idx] {
                        continue;
                    }
                    let (oy, ox) = (idx / wid, idx % wid);
                    super::gather_patch(xv, &mut patch, c_in, h, wid, kernel, pad, oy, ox);
                    for slot in dpatch.iter_mut() {
                        *slot = R::zero();
                    }
                    for co in 0..c_out {
                        let gv = g[co * h * wid + idx];
                        if gv == R::zero() {
                            continue;
                        }
                        let wrow = &wv[co * patch_len..(co + 1) * patch_len];
                        let dwrow = &mut dw[co * patch_len..(co + 1) * patch_len];
                        for j in 0..patch_len {
                            dwrow[j] = dwrow[j] + gv * patch[j];
                            if want_x {
                                dpatch[j] = dpatch[j] + gv * wrow[j];
                            }
                        }
                    }
                    if want_x {
                        // Scatter dpatch back into the input gradient.
                        for ky in 0..kernel {
                            let iy = oy + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let kx_lo = pad.saturating_sub(ox);
                            let kx_hi = (wid + pad - ox).min(kernel);
                            let dst_row = (iy - pad) * wid;
                            for ci in 0..c_in {
                                let dst = ci * h * wid + dst_row;
                                let src = ci * k2 + ky * kernel;
                                for kx in kx_lo..kx_hi {
                                    let xi = dst + ox + kx - pad;
                                    dx[xi] = dx[xi] + dpatch[src + kx];
                                }
                            }
                        }
                    }
                }
            }
            None => {
                for co in 0..c_out {
                    for ci in 0..c_in {
                        for ky in 0..kernel {
                            let oy_lo = pad.saturating_sub(ky);
                            let oy_hi = (h + pad).saturating_sub(ky).min(h);
                            for kx in 0..kernel {
                                let widx = ((co * c_in + ci) * kernel + ky) * kernel + kx;
                                let wgt = wv[widx];
                                let ox_lo = pad.saturating_sub(kx);
                                let ox_hi = (wid + pad).saturating_sub(kx).min(wid);
                                let mut wacc = R::zero();
                                for oy in oy_lo..oy_hi {
                                    let iy = oy + ky - pad;
                                    let irow = (ci * h + iy) * wid;
                                    let orow = (co * h + oy) * wid;
                                    for ox in ox_lo..ox_hi {
                                        let ix = ox + kx - pad;
                                        let gv = g[orow + ox];
                                        if want_x {
                                            dx[irow + ix] = dx[irow + ix] + wgt * gv;
                                        }
                                        wacc = wacc + gv * xv[irow + ix];
                                    }
                                }
                                dw[widx] = dw[widx] + wacc;
                            }
                        }
                    }
                }
            }
        }
        if want_x {
            self.accumulate(x, dx);
        }
        if want_w {
            self.accumulate(w, dw);
        }
    }

    fn backward_maxpool(&mut self, x: TensorId, n: usize, keep: &[bool], g: &[R]) {
        let d = self.shapes[x.0][1];
        let xv = &self.values[x.0];
        let mut dx = vec![R::zero(); n * d];
        for c in 0..d {
            for i in 0..n {
                let mut cur = xv[i * d + c];
                // Earliest row wins ties, so only a strictly greater value
                // moves the argmax.
                let mut arg = i;
                if keep[i * n + i] {
                    dx[arg * d + c] = dx[arg * d + c] + g[(c * n + i) * n + i];
                }
                for j in (i + 1)..n {
                    let v = xv[j * d + c];
                    if v > cur {
                        cur = v;
                        arg = j;
                    }
                    if keep[i * n + j] {
                        dx[arg * d + c] = dx[arg * d + c] + g[(c * n + i) * n + j];
                    }
                }
            }
        }
        self.accumulate(x, dx);
    }

    fn backward_layer_norm(&mut self, rec: &Record<R>, eps: R, g: &[R]) {
        let x = rec.inputs[0];
        let gamma = rec.inputs[1];
        let beta = rec.inputs[2];
        let (rows, d) = (self.shapes[x.0][0], self.shapes[x.0][1]);
        let inv_d = R::from_f64(1.0 / d as f64);
        let xv = &self.values[x.0];
        let gv = &self.values[gamma.0];

        let want_x = self.wants_grad(x);
        let want_gamma = self.wants_grad(gamma);
        let want_beta = self.wants_grad(beta);

        let mut dx = vec![R::zero(); rows * d];
        let mut dgamma = vec![R::zero(); rows * d];
        let mut dbeta = vec![R::zero(); rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let grow = &g[r * d..(r + 1) * d];
            let mean = row.iter().fold(R::zero(), |a, &v| a + v) * inv_d;
            let var = row
                .iter()
                .fold(R::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv_d;
            let inv_std = R::one() / (var + eps).sqrt();

            let mut mean_dxhat = R::zero();
            let mut mean_dxhat_xhat = R::zero();
            for c in 0..d {
                let xhat = (row[c] - mean) * inv_std;
                let dxhat = grow[c] * gv[r * d + c];
                dbeta[r * d + c] = grow[c];
                dgamma[r * d + c] = grow[c] * xhat;
                mean_dxhat = mean_dxhat + dxhat;
                mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat;
            }
            mean_dxhat = mean_dxhat * inv_d;
            mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
            if want_x {
                for c in 0..d {
                    let xhat = (row[c] - mean) * inv_std;
                    let dxhat = grow[c] * gv[r * d + c];
                    dx[r * d + c] = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std;
                }
            }
        }
        if want_x {
            self.accumulate(x, dx);
        }
        if want_gamma {
            self.accumulate(gamma, dgamma);
        }
        if want_beta {
            self.accumulate(beta, dbeta);
        }
    }

    fn backward_l2_normalize(&mut self, x: TensorId, axis: usize, eps: R, g: &[R]) {
        let shape = self.shapes[x.0].clone();
        let (outer, len, inner) = axis_strides(&shape, axis);
        let xv = &self.values[x.0];
        let mut dx = vec![R::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut sq = R::zero();
                let mut dot = R::zero();
                for t in 0..len {
                    let idx = base + t * inner;
                    sq = sq + xv[idx] * xv[idx];
                    dot = dot + g[idx] * xv[idx];
                }
                let n2 = sq + eps;
                let n = n2.sqrt();
                let inv_n = R::one() / n;
                let dot_over_n3 = dot / (n2 * n);
                for t in 0..len {
                    let idx = base + t * inner;
                    dx[idx] = g[idx] * inv_n - xv[idx] * dot_over_n3;
                }
            }
        }
        self.accumulate(x, dx);
    }
}
