use std::fmt;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::generators::FeatureGenerator;
use crate::nn::{Conv2d, ConvBlock, Linear};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use super::config::{BranchSet, ModelConfig, StageConfig};
use super::plan::ShapePlan;

/// One of the four classifier heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Main,
    Ffb,
    Fem3,
    Fem4,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Branch::Main, Branch::Ffb, Branch::Fem3, Branch::Fem4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Main => "mb",
            Branch::Ffb => "ffb",
            Branch::Fem3 => "fem3",
            Branch::Fem4 => "fem4",
        }
    }

    pub fn enabled_in(self, set: BranchSet) -> bool {
        match self {
            Branch::Main => true,
            Branch::Ffb => set.ffb,
            Branch::Fem3 | Branch::Fem4 => set.fem,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Logit nodes of the branches that ran.
#[derive(Clone, Copy, Debug)]
pub struct BranchLogits {
    pub vars: [Option<Var>; 4],
}

impl BranchLogits {
    pub fn get(&self, b: Branch) -> Option<Var> {
        self.vars[b.index()]
    }
}

/// Every node of interest from one traced forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `F_0 .. F_4`.
    pub main: [Var; 5],
    /// `G_0 .. G_4` when the fusion branch ran.
    pub fused: Option<[Var; 5]>,
    /// `v_3, v_4` when the ensemble heads ran.
    pub fem: Option<[Var; 2]>,
    pub logits: BranchLogits,
}

/// Intermediate feature values retained for inspection.
#[derive(Clone, Debug)]
pub struct Features<T> {
    pub main: Vec<Tensor<T>>,
    pub fused: Vec<Tensor<T>>,
    pub fem: Vec<Tensor<T>>,
}

/// Per-branch logits and probabilities plus their vote.
#[derive(Clone, Debug)]
pub struct BranchOutputs<T> {
    pub logits: [Option<Tensor<T>>; 4],
    pub probs: [Option<Tensor<T>>; 4],
    /// Element-wise sum of the probabilities of the selected branches.
    pub p_sum: Tensor<T>,
    pub features: Option<Features<T>>,
}

impl<T: Scalar> BranchOutputs<T> {
    pub fn prob(&self, b: Branch) -> Option<&Tensor<T>> {
        self.probs[b.index()].as_ref()
    }

    pub fn p_mb(&self) -> &Tensor<T> {
        self.probs[0].as_ref().expect("main branch always runs")
    }

    /// Class per sample: argmax of `p_sum`, ties to the lowest index.
    pub fn predictions(&self) -> Vec<usize> {
        rows_argmax(&self.p_sum)
    }

    pub fn branch_predictions(&self, b: Branch) -> Option<Vec<usize>> {
        self.prob(b).map(rows_argmax)
    }

    /// Assembles outputs from branch probabilities, summing the present ones.
    pub fn from_probs(logits: [Option<Tensor<T>>; 4], probs: [Option<Tensor<T>>; 4]) -> Result<Self> {
        let mut present = probs.iter().flatten();
        let first = present
            .next()
            .ok_or_else(|| Error::config("no branch selected"))?
            .clone();
        let p_sum = present.try_fold(first, |acc, p| ops::add(&acc, p))?;
        Ok(BranchOutputs {
            logits,
            probs,
            p_sum,
            features: None,
        })
    }
}

fn rows_argmax<T: Scalar>(t: &Tensor<T>) -> Vec<usize> {
    t.data().chunks_exact(t.shape().sample_len()).map(ops::argmax).collect()
}

type Stage = Vec<ConvBlock>;

fn build_stage<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    in_channels: usize,
    cfg: &StageConfig,
) -> Result<Stage> {
    (0..cfg.blocks)
        .map(|i| {
            let (cin, stride) = if i == 0 {
                (in_channels, cfg.stride)
            } else {
                (cfg.out_channels, 1)
            };
            ConvBlock::new(store, &format!("{name}.{i}"), cin, cfg.out_channels, stride, cfg.residual)
        })
        .collect()
}

fn run_stage<T: Scalar>(stage: &Stage, store: &ParamStore<T>, tape: &mut Tape<T>, mut x: Var) -> Result<Var> {
    for block in stage {
        x = block.forward(store, tape, x)?;
    }
    Ok(x)
}

fn stage_params(stage: &Stage) -> impl Iterator<Item = ParamId> + '_ {
    stage.iter().flat_map(ConvBlock::params)
}

/// The assembled network. Parameters of all branches are created up front
/// in a fixed order (main, fusion, ensemble heads), so a seed yields the
/// same main-branch weights whichever branches are later trained.
#[derive(Clone, Debug)]
pub struct MgmlNet<T> {
    cfg: ModelConfig,
    plan: ShapePlan,
    store: ParamStore<T>,
    generator: FeatureGenerator,
    stem: Conv2d,
    stages: Vec<Stage>,
    mb_head: Linear,
    /// `g_0 .. g_3`, mirroring stages 1 to 4 with separate weights.
    ffb_stages: Vec<Stage>,
    ffb_head: Linear,
    fem3_head: Linear,
    fem4_head: Linear,
}

impl<T: Scalar> MgmlNet<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let plan = ShapePlan::new(&cfg)?;
        let b = &cfg.backbone;
        let mut store = ParamStore::new(seed);
        let stem = Conv2d::new(
            &mut store,
            "main.stem",
            b.in_channels,
            b.stem.out_channels,
            b.stem.kernel,
            b.stem.stride,
        )?;
        let mut stages = Vec::with_capacity(4);
        for (i, s) in b.stages.iter().enumerate() {
            stages.push(build_stage(&mut store, &format!("main.layer{}", i + 1), b.level_channels(i), s)?);
        }
        let c4 = b.level_channels(4);
        let mb_head = Linear::new(&mut store, "main.fc", c4, cfg.num_classes)?;
        let mut ffb_stages = Vec::with_capacity(4);
        for (i, s) in b.stages.iter().enumerate() {
            ffb_stages.push(build_stage(&mut store, &format!("ffb.g{i}"), b.level_channels(i), s)?);
        }
        let ffb_head = Linear::new(&mut store, "ffb.fc", c4, cfg.num_classes)?;
        let fem3_head = Linear::new(&mut store, "fem.fc3", plan.fem_len[0], cfg.num_classes)?;
        let fem4_head = Linear::new(&mut store, "fem.fc4", plan.fem_len[1], cfg.num_classes)?;
        let generator = FeatureGenerator::new(cfg.crop)?;
        Ok(MgmlNet {
            cfg,
            plan,
            store,
            generator,
            stem,
            stages,
            mb_head,
            ffb_stages,
            ffb_head,
            fem3_head,
            fem4_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &ShapePlan {
        &self.plan
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn generator(&self) -> &FeatureGenerator {
        &self.generator
    }

    /// Parameters that the given branch selection reads.
    pub fn param_ids(&self, branches: BranchSet) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = vec![self.stem.weight, self.stem.bias];
        ids.extend(self.stages.iter().flat_map(stage_params));
        ids.extend(self.mb_head.params());
        if branches.ffb {
            ids.extend(self.ffb_stages.iter().flat_map(stage_params));
            ids.extend(self.ffb_head.params());
        }
        if branches.fem {
            ids.extend(self.fem3_head.params());
            ids.extend(self.fem4_head.params());
        }
        ids.sort_unstable();
        ids
    }

    /// Parameters of the fusion-branch convolution stages `g_0 .. g_3`.
    pub fn fusion_conv_params(&self) -> Vec<ParamId> {
        self.ffb_stages.iter().flat_map(stage_params).collect()
    }

    /// Main branch: `F_i = f_i(F_{i-1})` and the main-head logits.
    pub fn forward_main(&self, tape: &mut Tape<T>, x: Var) -> Result<([Var; 5], Var)> {
        let s = tape.shape(x);
        let expect = self.plan.input;
        if (s.c, s.h, s.w) != (expect.c, expect.h, expect.w) {
            return Err(Error::shape(format!(
                "model expects input {}x{expect}, got {s}",
                s.n
            )));
        }
        let st = &self.store;
        let mut f = self.stem.forward(st, tape, x)?;
        f = tape.relu(f);
        if self.cfg.backbone.stem.pool {
            let s = tape.shape(f);
            f = tape.adaptive_avg_pool(f, s.h / 2, s.w / 2)?;
        }
        let mut feats = [f; 5];
        for (i, stage) in self.stages.iter().enumerate() {
            f = run_stage(stage, st, tape, f)?;
            feats[i + 1] = f;
        }
        let pooled = tape.global_avg_pool(feats[4]);
        let logits = self.mb_head.forward(st, tape, pooled)?;
        Ok((feats, logits))
    }

    /// Fusion branch over `F_0 .. F_3`: `G_0 = cs(F_0)`,
    /// `G_{i+1} = cs(F_{i+1}) + g_i(G_i)`, `G_4 = g_3(G_3)`.
    pub fn forward_ffb(&self, tape: &mut Tape<T>, main: &[Var; 5]) -> Result<([Var; 5], Var)> {
        let st = &self.store;
        let g0 = self.generator.cs_fg(tape, main[0])?;
        let mut g = [g0; 5];
        for i in 0..3 {
            let fresh = self.generator.cs_fg(tape, main[i + 1])?;
            let carried = run_stage(&self.ffb_stages[i], st, tape, g[i])?;
            if tape.shape(fresh) != tape.shape(carried) {
                return Err(Error::shape(format!(
                    "fusion level {i}: cs_fg(F_{}) is {} but g_{i}(G_{i}) is {}",
                    i + 1,
                    tape.shape(fresh),
                    tape.shape(carried)
                )));
            }
            g[i + 1] = tape.add(fresh, carried)?;
        }
        g[4] = run_stage(&self.ffb_stages[3], st, tape, g[3])?;
        let pooled = tape.global_avg_pool(g[4]);
        let logits = self.ffb_head.forward(st, tape, pooled)?;
        Ok((g, logits))
    }

    /// Ensemble heads on `F_3` and `F_4`: `v_i = fc_fg(F_i)` and their logits.
    pub fn forward_fem(&self, tape: &mut Tape<T>, f3: Var, f4: Var) -> Result<([Var; 2], Var, Var)> {
        let st = &self.store;
        let v3 = self.generator.fc_fg(tape, f3)?;
        let v4 = self.generator.fc_fg(tape, f4)?;
        let l3 = self.fem3_head.forward(st, tape, v3)?;
        let l4 = self.fem4_head.forward(st, tape, v4)?;
        Ok(([v3, v4], l3, l4))
    }

    /// Traces the selected branches on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, branches: BranchSet) -> Result<ForwardTrace> {
        let (main, mb) = self.forward_main(tape, x)?;
        let mut logits = [Some(mb), None, None, None];
        let fused = if branches.ffb {
            let (g, l) = self.forward_ffb(tape, &main)?;
            logits[Branch::Ffb.index()] = Some(l);
            Some(g)
        } else {
            None
        };
        let fem = if branches.fem {
            let (v, l3, l4) = self.forward_fem(tape, main[3], main[4])?;
            logits[Branch::Fem3.index()] = Some(l3);
            logits[Branch::Fem4.index()] = Some(l4);
            Some(v)
        } else {
            None
        };
        Ok(ForwardTrace {
            main,
            fused,
            fem,
            logits: BranchLogits { vars: logits },
        })
    }

    /// Untraced prediction with the selected branches.
    pub fn predict(&self, x: &Tensor<T>, branches: BranchSet, keep_features: bool) -> Result<BranchOutputs<T>> {
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let trace = self.forward(&mut tape, xv, branches)?;
        let mut logits: [Option<Tensor<T>>; 4] = Default::default();
        let mut probs: [Option<Tensor<T>>; 4] = Default::default();
        for b in Branch::ALL {
            if let Some(v) = trace.logits.get(b) {
                let l = tape.value(v).clone();
                probs[b.index()] = Some(ops::softmax(&l));
                logits[b.index()] = Some(l);
            }
        }
        let mut out = BranchOutputs::from_probs(logits, probs)?;
        if keep_features {
            let grab = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
            out.features = Some(Features {
                main: grab(&trace.main),
                fused: trace.fused.as_ref().map(|g| grab(g)).unwrap_or_default(),
                fem: trace.fem.as_ref().map(|v| grab(v)).unwrap_or_default(),
            });
        }
        Ok(out)
    }

    /// All four branches and their vote.
    pub fn forward_ensemble(&self, x: &Tensor<T>) -> Result<BranchOutputs<T>> {
        self.predict(x, BranchSet::FULL, false)
    }

    /// Only the selected branches run and vote.
    pub fn ablation_select(&self, x: &Tensor<T>, branches: BranchSet) -> Result<BranchOutputs<T>> {
        self.predict(x, branches, false)
    }

    /// Shape of a batch of `n` inputs.
    pub fn input_shape(&self, n: usize) -> Result<Shape> {
        let s = self.plan.input;
        Shape::new(n, s.c, s.h, s.w)
    }
}
