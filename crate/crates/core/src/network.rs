//! Densely nested U-shaped backbone with per-node disentanglement and fusion.

use crate::biaf::{Biaf, BiafConfig, FusionMode};
use crate::ddfd::{Ddfd, DdfdConfig, MultiLevelFeatures};
use crate::error::{validation, Result};
use crate::layers::{Conv2d, ConvBlock};
use crate::params::{BufferStore, Forward, ParamStore};
use crate::scalar::Scalar;
use crate::tape::VarId;
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoDdfdBiaf,
    NoNestedDs,
}

impl std::str::FromStr for Ablation {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_ddfd_biaf" => Ok(Ablation::NoDdfdBiaf),
            "no_nested_ds" => Ok(Ablation::NoNestedDs),
            other => Err(validation(format!("unknown ablation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub input_channels: usize,
    pub fusion_mode: FusionMode,
    pub ablation: Ablation,
    pub attn_token_cap: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            depth: 5,
            base_channels: 32,
            input_channels: 1,
            fusion_mode: FusionMode::Add,
            ablation: Ablation::Full,
            attn_token_cap: 256,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 {
            return Err(validation(format!("depth must be >= 3, got {}", self.depth)));
        }
        if self.base_channels < 8 {
            return Err(validation(format!(
                "base_channels must be >= 8, got {}",
                self.base_channels
            )));
        }
        if self.input_channels == 0 {
            return Err(validation("input_channels must be >= 1"));
        }
        if self.attn_token_cap == 0 {
            return Err(validation("attn_token_cap must be >= 1"));
        }
        Ok(())
    }

    /// Channel width at level i: base doubling per level.
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn required_divisor(&self) -> usize {
        1 << (self.depth - 1)
    }
}

/// Probability maps produced by one forward pass.
pub struct SupervisionOutputs {
    /// Heads on the upsampling endpoints X_{0,j}, j = 1..depth-1.
    pub u_heads: Vec<VarId>,
    /// Heads on the fusion output paths at the outermost row.
    pub b_heads: Vec<VarId>,
    /// The outermost u_head, used for inference.
    pub final_: VarId,
}

struct Head {
    c3: Conv2d,
    c1: Conv2d,
}

impl Head {
    fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
    ) -> Self {
        Head {
            c3: Conv2d::register(store, rng, format!("{name}.c3"), cin, cin, 3, 1, 1),
            c1: Conv2d::register(store, rng, format!("{name}.c1"), cin, 1, 1, 1, 0),
        }
    }

    /// 3x3 conv -> ReLU -> 1x1 conv -> sigmoid, resized to (h, w).
    fn forward<S: Scalar>(&self, f: &mut Forward<S>, x: VarId, h: usize, w: usize) -> VarId {
        let y = self.c3.forward(f, x);
        let y = f.g.relu(y);
        let y = self.c1.forward(f, y);
        let y = f.g.sigmoid(y);
        f.g.bilinear_resize(y, h, w)
    }
}

enum Node {
    Full {
        row_proj: Conv2d,
        ddfd: Ddfd,
        biaf: Biaf,
        out_block: ConvBlock,
    },
    Plain {
        out_block: ConvBlock,
    },
}

struct Arch {
    encoder: Vec<ConvBlock>,
    shallow_stem: Conv2d,
    /// grid[j-1][i] is the node at row i, column j.
    grid: Vec<Vec<Node>>,
    u_heads: Vec<Head>,
    b_heads: Vec<Head>,
}

pub struct Model<S: Scalar> {
    pub cfg: NetworkConfig,
    arch: Arch,
    pub store: ParamStore<S>,
    pub buffers: BufferStore<S>,
}

impl<S: Scalar> Model<S> {
    /// Deterministic construction: identical (cfg, seed) gives bit-identical
    /// initial parameters.
    pub fn build(cfg: NetworkConfig, seed: u64) -> Result<Model<S>> {
        cfg.validate()?;
        let mut store = ParamStore::<S>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.depth;

        let mut encoder = Vec::with_capacity(d);
        encoder.push(ConvBlock::register(
            &mut store,
            &mut rng,
            "enc0",
            cfg.input_channels,
            cfg.channels_at(0),
            1,
        ));
        for i in 1..d {
            encoder.push(ConvBlock::register(
                &mut store,
                &mut rng,
                &format!("enc{i}"),
                cfg.channels_at(i - 1),
                cfg.channels_at(i),
                2,
            ));
        }
        // Full-resolution shallow source for row 0, where no shallower grid
        // row exists.
        let shallow_stem = Conv2d::register(
            &mut store,
            &mut rng,
            "shallow_stem",
            cfg.input_channels,
            cfg.base_channels / 2,
            3,
            1,
            1,
        );

        let mut grid = Vec::with_capacity(d - 1);
        for j in 1..d {
            let mut col = Vec::with_capacity(d - j);
            for i in 0..d - j {
                let c = cfg.channels_at(i);
                let name = format!("node{i}_{j}");
                let node = match cfg.ablation {
                    Ablation::NoDdfdBiaf => Node::Plain {
                        // row entries (j*C) plus upsampled deep features (2C)
                        out_block: ConvBlock::register(
                            &mut store,
                            &mut rng,
                            &format!("{name}.out"),
                            j * c + 2 * c,
                            c,
                            1,
                        ),
                    },
                    _ => Node::Full {
                        row_proj: Conv2d::register(
                            &mut store,
                            &mut rng,
                            format!("{name}.row_proj"),
                            j * c,
                            c,
                            1,
                            1,
                            0,
                        ),
                        ddfd: Ddfd::register(
                            &mut store,
                            &mut rng,
                            format!("{name}.ddfd"),
                            DdfdConfig {
                                channels: c,
                                shallow_channels: c / 2,
                                shallow_factor: if i == 0 { 1 } else { 2 },
                                low_cut: 0.25,
                                high_cut: 0.75,
                                reduction: 4,
                            },
                        ),
                        biaf: Biaf::register(
                            &mut store,
                            &mut rng,
                            format!("{name}.biaf"),
                            BiafConfig {
                                channels: c,
                                kernels: 4,
                                fusion_mode: cfg.fusion_mode,
                                low_cut: 0.25,
                                high_cut: 0.75,
                                attn_token_cap: cfg.attn_token_cap,
                            },
                        ),
                        out_block: ConvBlock::register(
                            &mut store,
                            &mut rng,
                            &format!("{name}.out"),
                            c,
                            c,
                            1,
                        ),
                    },
                };
                col.push(node);
            }
            grid.push(col);
        }

        let c0 = cfg.base_channels;
        let u_heads = (1..d)
            .map(|j| Head::register(&mut store, &mut rng, &format!("u_head{j}"), c0))
            .collect();
        let b_heads = (1..d)
            .map(|j| Head::register(&mut store, &mut rng, &format!("b_head{j}"), c0))
            .collect();

        Ok(Model {
            cfg,
            arch: Arch {
                encoder,
                shallow_stem,
                grid,
                u_heads,
                b_heads,
            },
            store,
            buffers: BufferStore::default(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 {
            return Err(validation(format!(
                "expected (N, C, H, W) input, got {shape:?}"
            )));
        }
        if shape[1] != self.cfg.input_channels {
            return Err(validation(format!(
                "expected {} input channels, got {}",
                self.cfg.input_channels, shape[1]
            )));
        }
        let div = self.cfg.required_divisor();
        if shape[2] % div != 0 || shape[3] % div != 0 {
            return Err(validation(format!(
                "input resolution {}x{} must be divisible by {div} at depth {}",
                shape[2], shape[3], self.cfg.depth
            )));
        }
        Ok(())
    }

    /// Runs a forward pass, returning the live tape alongside the outputs so
    /// a loss can be attached to the same graph.
    pub fn forward(
        &mut self,
        image: &ArrayD<S>,
        train: bool,
    ) -> Result<(Forward<'_, S>, SupervisionOutputs)> {
        self.check_input(image.shape())?;
        let (h, w) = (image.shape()[2], image.shape()[3]);
        let mut f = Forward::new(&self.store, &mut self.buffers, train);
        let img = f.g.leaf(image.clone());
        let d = self.cfg.depth;

        let mut vals: Vec<Vec<VarId>> = Vec::with_capacity(d);
        vals.push(vec![self.arch.encoder[0].forward(&mut f, img)]);
        for i in 1..d {
            let x = self.arch.encoder[i].forward(&mut f, vals[i - 1][0]);
            vals.push(vec![x]);
        }
        let shallow0 = {
            let y = self.arch.shallow_stem.forward(&mut f, img);
            f.g.relu(y)
        };

        let mut b_taps = Vec::with_capacity(d - 1);
        for j in 1..d {
            for i in 0..d - j {
                let node = &self.arch.grid[j - 1][i];
                let out = match node {
                    Node::Full {
                        row_proj,
                        ddfd,
                        biaf,
                        out_block,
                    } => {
                        let row = if j == 1 {
                            vals[i][0]
                        } else {
                            f.g.concat(1, &vals[i][..j])
                        };
                        let current = row_proj.forward(&mut f, row);
                        let triple = MultiLevelFeatures {
                            deep: vals[i + 1][j - 1],
                            current,
                            shallow: if i == 0 { shallow0 } else { vals[i - 1][j - 1] },
                        };
                        let dis = ddfd.forward(&mut f, &triple)?;
                        let fused = biaf.forward(&mut f, &dis)?;
                        if i == 0 {
                            b_taps.push(fused);
                        }
                        out_block.forward(&mut f, fused)
                    }
                    Node::Plain { out_block } => {
                        let deep = vals[i + 1][j - 1];
                        let dsh = f.g.shape(deep).to_vec();
                        let up = f.g.bilinear_resize(deep, dsh[2] * 2, dsh[3] * 2);
                        let mut parts: Vec<VarId> = vals[i][..j].to_vec();
                        parts.push(up);
                        let cat = f.g.concat(1, &parts);
                        let out = out_block.forward(&mut f, cat);
                        if i == 0 {
                            // with fusion removed, the supervision path taps
                            // the node output directly
                            b_taps.push(out);
                        }
                        out
                    }
                };
                vals[i].push(out);
            }
        }

        let u_heads: Vec<VarId> = self
            .arch
            .u_heads
            .iter()
            .enumerate()
            .map(|(idx, head)| head.forward(&mut f, vals[0][idx + 1], h, w))
            .collect();
        let b_heads: Vec<VarId> = self
            .arch
            .b_heads
            .iter()
            .zip(&b_taps)
            .map(|(head, &tap)| head.forward(&mut f, tap, h, w))
            .collect();
        let final_ = *u_heads.last().expect("depth >= 3 gives >= 2 heads");
        Ok((
            f,
            SupervisionOutputs {
                u_heads,
                b_heads,
                final_,
            },
        ))
    }

    /// Inference: eval-mode forward, returning only the final probability map.
    pub fn infer(&mut self, image: &ArrayD<S>) -> Result<ArrayD<S>> {
        let (f, outs) = self.forward(image, false)?;
        Ok(f.g.value(outs.final_).clone())
    }
}
