//! Reverse-mode differentiation tape.
//!
//! Every differentiable operation is a method on [`Tape`]. The tape records
//! each executed operation together with handles to its inputs and output;
//! [`Tape::backward`] replays the records once, in reverse execution order,
//! accumulating gradients into every tensor that requires them.
//!
//! A tape lives for one training step and is dropped after backward.
//! [`Tape::inference`] gives a non-recording tape for search and evaluation;
//! the operations behave identically but nothing is stored.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

enum Op {
    /// [M×K]·[K×N] → [M×N]
    Matmul,
    /// [M×K]·[K] → [M]
    MatVec,
    /// [T]·[T×E] → [E] (row vector times matrix)
    VecMat,
    Add,
    Mul,
    Scale(f64),
    /// [T×A] + [A] broadcast over rows
    AddRowBroadcast,
    /// [T]⊗[A] → [T×A]
    Outer,
    Tanh,
    Sigmoid,
    Log,
    /// n-ary concatenation of vectors
    Concat,
    /// n vectors of length E → [n×E]
    StackRows,
    GatherRow(usize),
    SliceVec { start: usize },
    ReduceSum,
    MaskedSoftmax { mask: Vec<bool>, temperature: f64 },
    /// elementwise max over n same-length vectors; backward follows the
    /// argmax (earliest input on ties)
    MaxVecs,
}

struct Record {
    op: Op,
    inputs: Vec<Tensor>,
    output: Tensor,
}

/// Operation recorder for one forward/backward cycle.
pub struct Tape {
    records: RefCell<Vec<Record>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    /// A recording tape for training.
    pub fn new() -> Tape {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A non-recording tape for search/evaluation. `backward` is not
    /// available on the produced graphs.
    pub fn inference() -> Tape {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.borrow().is_empty()
    }

    fn finish(&self, op: Op, inputs: Vec<Tensor>, output: Tensor) -> Tensor {
        let needs_grad = inputs.iter().any(|t| t.requires_grad());
        output.set_requires_grad(needs_grad);
        if self.recording && needs_grad {
            self.records.borrow_mut().push(Record {
                op,
                inputs,
                output: output.clone(),
            });
        }
        output
    }

    // ── forward operations ──────────────────────────────────────────────

    /// Matrix product [M×K]·[K×N] → [M×N].
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = a.values_ref();
        let bv = b.values_ref();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        drop(av);
        drop(bv);
        let output = Tensor::new(vec![m, n], out)?;
        Ok(self.finish(Op::Matmul, vec![a.clone(), b.clone()], output))
    }

    /// Matrix-vector product [M×K]·[K] → [M].
    pub fn matvec(&self, w: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (sw, sx) = (w.shape(), x.shape());
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::shape("matvec", format!("{sw:?} x {sx:?}")));
        }
        let (m, k) = (sw[0], sw[1]);
        let wv = w.values_ref();
        let xv = x.values_ref();
        let mut out = vec![0.0; m];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv[i * k..(i + 1) * k];
            *o = row.iter().zip(xv.iter()).map(|(a, b)| a * b).sum();
        }
        drop(wv);
        drop(xv);
        let output = Tensor::new(vec![m], out)?;
        Ok(self.finish(Op::MatVec, vec![w.clone(), x.clone()], output))
    }

    /// Row-vector-matrix product [T]·[T×E] → [E]; the weighted sum of rows.
    pub fn vecmat(&self, x: &Tensor, m: &Tensor) -> Result<Tensor> {
        let (sx, sm) = (x.shape(), m.shape());
        if sx.len() != 1 || sm.len() != 2 || sx[0] != sm[0] {
            return Err(Error::shape("vecmat", format!("{sx:?} x {sm:?}")));
        }
        let (t, e) = (sm[0], sm[1]);
        let xv = x.values_ref();
        let mv = m.values_ref();
        let mut out = vec![0.0; e];
        for (ti, &w) in xv.iter().enumerate().take(t) {
            if w == 0.0 {
                continue;
            }
            let row = &mv[ti * e..(ti + 1) * e];
            for (o, &r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
        drop(xv);
        drop(mv);
        let output = Tensor::new(vec![e], out)?;
        Ok(self.finish(Op::VecMat, vec![x.clone(), m.clone()], output))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let out: Vec<f64> = a
            .values_ref()
            .iter()
            .zip(b.values_ref().iter())
            .map(|(x, y)| x + y)
            .collect();
        let output = Tensor::new(a.shape(), out)?;
        Ok(self.finish(Op::Add, vec![a.clone(), b.clone()], output))
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let out: Vec<f64> = a
            .values_ref()
            .iter()
            .zip(b.values_ref().iter())
            .map(|(x, y)| x * y)
            .collect();
        let output = Tensor::new(a.shape(), out)?;
        Ok(self.finish(Op::Mul, vec![a.clone(), b.clone()], output))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let out: Vec<f64> = a.values_ref().iter().map(|x| x * c).collect();
        let output = Tensor::new(a.shape(), out).expect("scale shape");
        self.finish(Op::Scale(c), vec![a.clone()], output)
    }

    pub fn neg(&self, a: &Tensor) -> Tensor {
        self.scale(a, -1.0)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let nb = self.neg(b);
        self.add(a, &nb)
    }

    /// Add a vector [A] to every row of a matrix [T×A].
    pub fn add_row_broadcast(&self, m: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (sm, sv) = (m.shape(), v.shape());
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::shape("add-row-broadcast", format!("{sm:?} + {sv:?}")));
        }
        let a = sm[1];
        let mv = m.values_ref();
        let vv = v.values_ref();
        let out: Vec<f64> = mv.iter().enumerate().map(|(i, x)| x + vv[i % a]).collect();
        drop(mv);
        drop(vv);
        let output = Tensor::new(sm, out)?;
        Ok(self.finish(Op::AddRowBroadcast, vec![m.clone(), v.clone()], output))
    }

    /// Outer product [T]⊗[A] → [T×A].
    pub fn outer(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 1 || sb.len() != 1 {
            return Err(Error::shape("outer", format!("{sa:?} x {sb:?}")));
        }
        let (t, e) = (sa[0], sb[0]);
        let av = a.values_ref();
        let bv = b.values_ref();
        let mut out = Vec::with_capacity(t * e);
        for &x in av.iter() {
            for &y in bv.iter() {
                out.push(x * y);
            }
        }
        drop(av);
        drop(bv);
        let output = Tensor::new(vec![t, e], out)?;
        Ok(self.finish(Op::Outer, vec![a.clone(), b.clone()], output))
    }

    pub fn tanh(&self, a: &Tensor) -> Tensor {
        let out: Vec<f64> = a.values_ref().iter().map(|x| x.tanh()).collect();
        let output = Tensor::new(a.shape(), out).expect("tanh shape");
        self.finish(Op::Tanh, vec![a.clone()], output)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Tensor {
        let out: Vec<f64> = a
            .values_ref()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let output = Tensor::new(a.shape(), out).expect("sigmoid shape");
        self.finish(Op::Sigmoid, vec![a.clone()], output)
    }

    /// Natural logarithm, elementwise.
    pub fn log(&self, a: &Tensor) -> Tensor {
        let out: Vec<f64> = a.values_ref().iter().map(|x| x.ln()).collect();
        let output = Tensor::new(a.shape(), out).expect("log shape");
        self.finish(Op::Log, vec![a.clone()], output)
    }

    /// Concatenate vectors into one vector.
    pub fn concat(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let mut out = Vec::new();
        for p in parts {
            if p.rank() != 1 {
                return Err(Error::shape("concat", format!("rank {} != 1", p.rank())));
            }
            out.extend_from_slice(&p.values_ref());
        }
        let output = Tensor::new(vec![out.len()], out)?;
        let inputs: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(self.finish(Op::Concat, inputs, output))
    }

    /// Stack n same-length vectors into an [n×E] matrix.
    pub fn stack_rows(&self, rows: &[Tensor]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::Contract("stack of zero rows".into()));
        }
        let e = rows[0].numel();
        let mut out = Vec::with_capacity(rows.len() * e);
        for r in rows {
            if r.rank() != 1 || r.numel() != e {
                return Err(Error::shape("stack-rows", format!("{:?} vs [{e}]", r.shape())));
            }
            out.extend_from_slice(&r.values_ref());
        }
        let output = Tensor::new(vec![rows.len(), e], out)?;
        Ok(self.finish(Op::StackRows, rows.to_vec(), output))
    }

    /// Row `i` of [T×E] → [E], with gradient scattered back into row `i`.
    pub fn gather_row(&self, m: &Tensor, i: usize) -> Result<Tensor> {
        let sm = m.shape();
        if sm.len() != 2 {
            return Err(Error::shape("gather-row", format!("rank {} != 2", sm.len())));
        }
        if i >= sm[0] {
            return Err(Error::bounds("gather-row", format!("row {i} of {}", sm[0])));
        }
        let e = sm[1];
        let out = m.values_ref()[i * e..(i + 1) * e].to_vec();
        let output = Tensor::new(vec![e], out)?;
        Ok(self.finish(Op::GatherRow(i), vec![m.clone()], output))
    }

    /// Contiguous slice of a vector.
    pub fn slice_vec(&self, v: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let sv = v.shape();
        if sv.len() != 1 {
            return Err(Error::shape("slice-vec", format!("rank {} != 1", sv.len())));
        }
        if start + len > sv[0] || len == 0 {
            return Err(Error::bounds(
                "slice-vec",
                format!("[{start}..{}) of [{}]", start + len, sv[0]),
            ));
        }
        let out = v.values_ref()[start..start + len].to_vec();
        let output = Tensor::new(vec![len], out)?;
        Ok(self.finish(Op::SliceVec { start }, vec![v.clone()], output))
    }

    /// Sum of all elements → scalar [1].
    pub fn reduce_sum(&self, a: &Tensor) -> Tensor {
        let s: f64 = a.values_ref().iter().sum();
        let output = Tensor::scalar(s);
        self.finish(Op::ReduceSum, vec![a.clone()], output)
    }

    /// Softmax over the unmasked entries of a vector of logits.
    ///
    /// Masked-out entries are excluded before exponentiation and come out
    /// exactly zero, with exactly zero gradient. The unmasked entries form a
    /// probability distribution of `softmax(logits / temperature)`
    /// renormalized over the support.
    pub fn masked_softmax(&self, logits: &Tensor, mask: &[bool], temperature: f64) -> Result<Tensor> {
        let sl = logits.shape();
        if sl.len() != 1 || sl[0] != mask.len() {
            return Err(Error::shape(
                "masked-softmax",
                format!("logits {sl:?} vs mask [{}]", mask.len()),
            ));
        }
        if !(temperature > 0.0) {
            return Err(Error::Contract(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptySupport("all softmax entries masked".into()));
        }
        let lv = logits.values_ref();
        let mut mx = f64::NEG_INFINITY;
        for (v, &keep) in lv.iter().zip(mask) {
            if keep && v / temperature > mx {
                mx = v / temperature;
            }
        }
        let mut out = vec![0.0; lv.len()];
        let mut z = 0.0;
        for (i, (&v, &keep)) in lv.iter().zip(mask).enumerate() {
            if keep {
                let e = (v / temperature - mx).exp();
                out[i] = e;
                z += e;
            }
        }
        for o in &mut out {
            *o /= z;
        }
        drop(lv);
        let output = Tensor::new(sl, out)?;
        Ok(self.finish(
            Op::MaskedSoftmax {
                mask: mask.to_vec(),
                temperature,
            },
            vec![logits.clone()],
            output,
        ))
    }

    /// Plain softmax: masked_softmax with full support.
    pub fn softmax(&self, logits: &Tensor, temperature: f64) -> Result<Tensor> {
        let mask = vec![true; logits.numel()];
        self.masked_softmax(logits, &mask, temperature)
    }

    /// Elementwise maximum over n same-length vectors (time max-pooling).
    pub fn max_vecs(&self, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Contract("max of zero tensors".into()));
        }
        let e = parts[0].numel();
        for p in parts {
            if p.rank() != 1 || p.numel() != e {
                return Err(Error::shape("max-vecs", format!("{:?} vs [{e}]", p.shape())));
            }
        }
        let mut out = parts[0].values();
        for p in &parts[1..] {
            for (o, &v) in out.iter_mut().zip(p.values_ref().iter()) {
                if v > *o {
                    *o = v;
                }
            }
        }
        let output = Tensor::new(vec![e], out)?;
        Ok(self.finish(Op::MaxVecs, parts.to_vec(), output))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss: every `requires_grad` tensor that
    /// contributed to `loss` on this tape receives (accumulates) its gradient.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !self.recording {
            return Err(Error::Contract("backward on an inference tape".into()));
        }
        if !loss.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let records = self.records.borrow();
        if !records.iter().any(|r| r.output.same_storage(loss)) {
            return Err(Error::Contract("loss was not produced on this tape".into()));
        }
        loss.accumulate_grad(&[1.0]);
        for rec in records.iter().rev() {
            let Some(gout) = rec.output.grad() else {
                continue;
            };
            backward_record(rec, &gout);
        }
        Ok(())
    }
}

fn backward_record(rec: &Record, g: &[f64]) {
    match &rec.op {
        Op::Matmul => {
            let a = &rec.inputs[0];
            let b = &rec.inputs[1];
            let (sa, sb) = (a.shape(), b.shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if a.requires_grad() {
                // dA = G · Bᵀ
                let bv = b.values_ref();
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let darow = &mut da[i * k..(i + 1) * k];
                    for (p, d) in darow.iter_mut().enumerate() {
                        let brow = &bv[p * n..(p + 1) * n];
                        *d = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                drop(bv);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                // dB = Aᵀ · G
                let av = a.values_ref();
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let arow = &av[i * k..(i + 1) * k];
                    let grow = &g[i * n..(i + 1) * n];
                    for (p, &aip) in arow.iter().enumerate() {
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for (d, &gij) in dbrow.iter_mut().zip(grow) {
                            *d += aip * gij;
                        }
                    }
                }
                drop(av);
                b.accumulate_grad(&db);
            }
        }
        Op::MatVec => {
            let w = &rec.inputs[0];
            let x = &rec.inputs[1];
            let (m, k) = (w.dim(0), w.dim(1));
            if w.requires_grad() {
                let xv = x.values_ref();
                let mut dw = vec![0.0; m * k];
                for (i, &gi) in g.iter().enumerate().take(m) {
                    if gi == 0.0 {
                        continue;
                    }
                    let row = &mut dw[i * k..(i + 1) * k];
                    for (d, &xj) in row.iter_mut().zip(xv.iter()) {
                        *d = gi * xj;
                    }
                }
                drop(xv);
                w.accumulate_grad(&dw);
            }
            if x.requires_grad() {
                let wv = w.values_ref();
                let mut dx = vec![0.0; k];
                for (i, &gi) in g.iter().enumerate().take(m) {
                    if gi == 0.0 {
                        continue;
                    }
                    let row = &wv[i * k..(i + 1) * k];
                    for (d, &wij) in dx.iter_mut().zip(row) {
                        *d += gi * wij;
                    }
                }
                drop(wv);
                x.accumulate_grad(&dx);
            }
        }
        Op::VecMat => {
            let x = &rec.inputs[0];
            let m = &rec.inputs[1];
            let (t, e) = (m.dim(0), m.dim(1));
            if x.requires_grad() {
                let mv = m.values_ref();
                let mut dx = vec![0.0; t];
                for (ti, d) in dx.iter_mut().enumerate() {
                    let row = &mv[ti * e..(ti + 1) * e];
                    *d = row.iter().zip(g).map(|(a, b)| a * b).sum();
                }
                drop(mv);
                x.accumulate_grad(&dx);
            }
            if m.requires_grad() {
                let xv = x.values_ref();
                let mut dm = vec![0.0; t * e];
                for (ti, &w) in xv.iter().enumerate().take(t) {
                    if w == 0.0 {
                        continue;
                    }
                    let row = &mut dm[ti * e..(ti + 1) * e];
                    for (d, &gj) in row.iter_mut().zip(g) {
                        *d = w * gj;
                    }
                }
                drop(xv);
                m.accumulate_grad(&dm);
            }
        }
        Op::Add => {
            for input in &rec.inputs {
                if input.requires_grad() {
                    input.accumulate_grad(g);
                }
            }
        }
        Op::Mul => {
            let a = &rec.inputs[0];
            let b = &rec.inputs[1];
            if a.requires_grad() {
                let bv = b.values_ref();
                let da: Vec<f64> = g.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
                drop(bv);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let av = a.values_ref();
                let db: Vec<f64> = g.iter().zip(av.iter()).map(|(x, y)| x * y).collect();
                drop(av);
                b.accumulate_grad(&db);
            }
        }
        Op::Scale(c) => {
            let a = &rec.inputs[0];
            if a.requires_grad() {
                let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                a.accumulate_grad(&da);
            }
        }
        Op::AddRowBroadcast => {
            let m = &rec.inputs[0];
            let v = &rec.inputs[1];
            let a = v.numel();
            if m.requires_grad() {
                m.accumulate_grad(g);
            }
            if v.requires_grad() {
                let mut dv = vec![0.0; a];
                for (i, &gi) in g.iter().enumerate() {
                    dv[i % a] += gi;
                }
                v.accumulate_grad(&dv);
            }
        }
        Op::Outer => {
            let a = &rec.inputs[0];
            let b = &rec.inputs[1];
            let (t, e) = (a.numel(), b.numel());
            if a.requires_grad() {
                let bv = b.values_ref();
                let mut da = vec![0.0; t];
                for (ti, d) in da.iter_mut().enumerate() {
                    let grow = &g[ti * e..(ti + 1) * e];
                    *d = grow.iter().zip(bv.iter()).map(|(x, y)| x * y).sum();
                }
                drop(bv);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let av = a.values_ref();
                let mut db = vec![0.0; e];
                for (ti, &ai) in av.iter().enumerate().take(t) {
                    let grow = &g[ti * e..(ti + 1) * e];
                    for (d, &gj) in db.iter_mut().zip(grow) {
                        *d += ai * gj;
                    }
                }
                drop(av);
                b.accumulate_grad(&db);
            }
        }
        Op::Tanh => {
            let a = &rec.inputs[0];
            if a.requires_grad() {
                let yv = rec.output.values_ref();
                let da: Vec<f64> = g.iter().zip(yv.iter()).map(|(gi, y)| gi * (1.0 - y * y)).collect();
                drop(yv);
                a.accumulate_grad(&da);
            }
        }
        Op::Sigmoid => {
            let a = &rec.inputs[0];
            if a.requires_grad() {
                let yv = rec.output.values_ref();
                let da: Vec<f64> = g.iter().zip(yv.iter()).map(|(gi, y)| gi * y * (1.0 - y)).collect();
                drop(yv);
                a.accumulate_grad(&da);
            }
        }
        Op::Log => {
            let a = &rec.inputs[0];
            if a.requires_grad() {
                let av = a.values_ref();
                let da: Vec<f64> = g.iter().zip(av.iter()).map(|(gi, x)| gi / x).collect();
                drop(av);
                a.accumulate_grad(&da);
            }
        }
        Op::Concat => {
            let mut offset = 0;
            for input in &rec.inputs {
                let n = input.numel();
                if input.requires_grad() {
                    input.accumulate_grad(&g[offset..offset + n]);
                }
                offset += n;
            }
        }
        Op::StackRows => {
            let e = rec.inputs[0].numel();
            for (i, input) in rec.inputs.iter().enumerate() {
                if input.requires_grad() {
                    input.accumulate_grad(&g[i * e..(i + 1) * e]);
                }
            }
        }
        Op::GatherRow(i) => {
            let m = &rec.inputs[0];
            if m.requires_grad() {
                let e = m.dim(1);
                let mut dm = vec![0.0; m.numel()];
                dm[i * e..(i + 1) * e].copy_from_slice(g);
                m.accumulate_grad(&dm);
            }
        }
        Op::SliceVec { start } => {
            let v = &rec.inputs[0];
            if v.requires_grad() {
                let mut dv = vec![0.0; v.numel()];
                dv[*start..start + g.len()].copy_from_slice(g);
                v.accumulate_grad(&dv);
            }
        }
        Op::ReduceSum => {
            let a = &rec.inputs[0];
            if a.requires_grad() {
                let da = vec![g[0]; a.numel()];
                a.accumulate_grad(&da);
            }
        }
        Op::MaskedSoftmax { mask, temperature } => {
            let a = &rec.inputs[0];
            if a.requires_grad() {
                let yv = rec.output.values_ref();
                let inner: f64 = g
                    .iter()
                    .zip(yv.iter())
                    .zip(mask)
                    .filter(|(_, &keep)| keep)
                    .map(|((gi, yi), _)| gi * yi)
                    .sum();
                let da: Vec<f64> = g
                    .iter()
                    .zip(yv.iter())
                    .zip(mask)
                    .map(|((gi, yi), &keep)| {
                        if keep {
                            yi * (gi - inner) / temperature
                        } else {
                            0.0
                        }
                    })
                    .collect();
                drop(yv);
                a.accumulate_grad(&da);
            }
        }
        Op::MaxVecs => {
            let e = rec.inputs[0].numel();
            // argmax per component, earliest input wins on ties
            let mut arg = vec![0usize; e];
            let mut best = rec.inputs[0].values();
            for (pi, p) in rec.inputs.iter().enumerate().skip(1) {
                let pv = p.values_ref();
                for j in 0..e {
                    if pv[j] > best[j] {
                        best[j] = pv[j];
                        arg[j] = pi;
                    }
                }
            }
            for (pi, p) in rec.inputs.iter().enumerate() {
                if !p.requires_grad() {
                    continue;
                }
                let dp: Vec<f64> = (0..e).map(|j| if arg[j] == pi { g[j] } else { 0.0 }).collect();
                p.accumulate_grad(&dp);
            }
        }
    }
}
