use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::SafeTensors;

use crate::{Layer, NnError, Real};

/// Raw named tensors as `(shape, values)`.
pub type NamedTensors<T> = BTreeMap<String, (Vec<usize>, Vec<T>)>;

pub fn write_safetensors<T: Real>(tensors: &NamedTensors<T>, path: &Path) -> Result<(), NnError> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(name, (shape, values))| {
            let mut b = Vec::new();
            T::write_le(values, &mut b);
            (name.clone(), shape.clone(), b)
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, shape, b)| {
            TensorView::new(T::DTYPE, shape.clone(), b)
                .map(|v| (name.clone(), v))
                .map_err(|e| NnError::Format(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let data = safetensors::serialize(views, None).map_err(|e| NnError::Format(e.to_string()))?;
    std::fs::write(path, data)?;
    Ok(())
}

pub fn read_safetensors<T: Real>(path: &Path) -> Result<NamedTensors<T>, NnError> {
    let raw = std::fs::read(path)?;
    let st = SafeTensors::deserialize(&raw).map_err(|e| NnError::Format(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != T::DTYPE {
            return Err(NnError::Format(format!(
                "tensor `{name}` has dtype {:?}, expected {:?}",
                view.dtype(),
                T::DTYPE
            )));
        }
        out.insert(name, (view.shape().to_vec(), T::read_le(view.data())));
    }
    Ok(out)
}

/// Writes every parameter and buffer of `layer`, keyed by parameter name.
pub fn save_params<T: Real, L: Layer<T> + ?Sized>(layer: &L, path: &Path) -> Result<(), NnError> {
    let mut tensors = BTreeMap::new();
    layer.params(&mut |p| {
        let prev = tensors.insert(p.name.clone(), (p.shape.clone(), p.value.clone()));
        assert!(prev.is_none(), "duplicate parameter name `{}`", p.name);
    });
    write_safetensors(&tensors, path)
}

/// Loads parameters by name. With `strict`, every parameter of `layer` must be
/// present; otherwise missing names keep their current values. Returns the
/// number of parameters loaded.
pub fn load_params<T: Real, L: Layer<T> + ?Sized>(
    layer: &mut L,
    path: &Path,
    strict: bool,
) -> Result<usize, NnError> {
    let tensors: HashMap<_, _> = read_safetensors::<T>(path)?.into_iter().collect();
    let mut err = None;
    let mut loaded = 0;
    layer.params_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        match tensors.get(&p.name) {
            Some((shape, values)) if *shape == p.shape => {
                p.value.copy_from_slice(values);
                loaded += 1;
            }
            Some((shape, _)) => {
                err = Some(NnError::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.shape.clone(),
                    found: shape.clone(),
                })
            }
            None if strict => err = Some(NnError::MissingParam { name: p.name.clone() }),
            None => {}
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(loaded),
    }
}
