use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{CommonArgs, MeasureArg};
use crate::error::{Error, Result};
use crate::info::MeasureTag;
use crate::ingest::{load_dataset, read_jacobians, Dataset, JacobianStore};
use crate::model::init_model;
use crate::ntk::sketch_capped;
use crate::pipeline::Problem;

pub(super) struct Loaded {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub store: JacobianStore,
    pub val_store: JacobianStore,
    pub snapshot: Value,
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn optional_sha(path: Option<&Path>) -> Result<Value> {
    Ok(match path {
        Some(p) => Value::String(file_sha256(p)?),
        None => Value::Null,
    })
}

fn check_store(store: &JacobianStore, ds: &Dataset, what: &str) -> Result<()> {
    if store.n() != ds.len() || store.k() != ds.outputs() {
        return Err(Error::Dimension(format!(
            "{what} Jacobians have n={}, k={} but the dataset has {} samples with {} outputs",
            store.n(),
            store.k(),
            ds.len(),
            ds.outputs()
        )));
    }
    Ok(())
}

impl MeasureArg {
    pub(super) fn tag(self) -> MeasureTag {
        match self {
            MeasureArg::Fsi => MeasureTag::Fsi,
            MeasureArg::Si => MeasureTag::Si,
        }
    }
}

pub(super) fn load(args: &CommonArgs, command: &str) -> Result<Loaded> {
    let config = args.train_config();
    config.validate()?;
    let train = load_dataset(&args.dataset, args.classes)?;
    let classes = args.classes.unwrap_or(train.classes);
    let val = args.val_dataset.as_ref().map(|p| load_dataset(p, Some(classes))).transpose()?;
    if let Some(v) = &val {
        if v.input_dim() != train.input_dim() {
            return Err(Error::Dimension(format!(
                "validation set has {} features, training set {}",
                v.input_dim(),
                train.input_dim()
            )));
        }
    }

    let (store, val_store) = match (&args.jacobians, &args.model) {
        (Some(path), _) => {
            let store = read_jacobians(path)?;
            check_store(&store, &train, "training")?;
            let val_store = match (&args.val_jacobians, &val) {
                (Some(vp), Some(v)) => {
                    let s = read_jacobians(vp)?;
                    check_store(&s, v, "validation")?;
                    s
                }
                (None, None) => store.clone(),
                (Some(_), None) => {
                    return Err(Error::InvalidArgument("--val-jacobians needs --val-dataset".into()))
                }
                (None, Some(_)) => {
                    return Err(Error::InvalidArgument("--val-dataset with --jacobians needs --val-jacobians".into()))
                }
            };
            (store, val_store)
        }
        (None, Some(spec)) => {
            if spec.input_dim() != train.input_dim() || spec.outputs() != train.outputs() {
                return Err(Error::Dimension(format!(
                    "model maps {} inputs to {} outputs; dataset has {} features and {} outputs",
                    spec.input_dim(),
                    spec.outputs(),
                    train.input_dim(),
                    train.outputs()
                )));
            }
            let model = init_model(*spec, args.seed)?;
            let store = JacobianStore::from_model(&model, &train.inputs, "model")?;
            let val_store = match &val {
                Some(v) => JacobianStore::from_model(&model, &v.inputs, "model")?,
                None => store.clone(),
            };
            (store, val_store)
        }
        (None, None) => return Err(Error::InvalidArgument("either --model or --jacobians is required".into())),
    };
    let (store, val_store) = match args.d0 {
        Some(d0) => (sketch_capped(&store, d0, args.seed)?, sketch_capped(&val_store, d0, args.seed)?),
        None => (store, val_store),
    };

    let snapshot = json!({
        "command": command,
        "inputs": {
            "dataset_sha256": file_sha256(&args.dataset)?,
            "val_dataset_sha256": optional_sha(args.val_dataset.as_deref())?,
            "jacobians_sha256": optional_sha(args.jacobians.as_deref())?,
            "val_jacobians_sha256": optional_sha(args.val_jacobians.as_deref())?,
        },
        "model": args.model,
        "classes": classes,
        "d0": args.d0,
        "seed": args.seed,
        "train": config,
        "measure": args.measure.tag(),
    });
    Ok(Loaded {
        train,
        val,
        store,
        val_store,
        snapshot,
    })
}

impl Loaded {
    /// The scoring problem, with training targets replaced when given.
    pub(super) fn problem(&self, args: &CommonArgs, targets: Option<&nalgebra::DMatrix<f64>>) -> Result<Problem> {
        let val_labels = self.val.as_ref().unwrap_or(&self.train).labels.clone();
        Problem::new(
            self.store.clone(),
            targets.unwrap_or(&self.train.targets).clone(),
            self.val_store.clone(),
            val_labels,
            args.train_config(),
        )
    }
}
