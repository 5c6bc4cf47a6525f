use super::{apply_warp, WarpField};
use crate::geometry::Mesh;
use crate::{Error, Result};

/// `steps[0]` is the template, `steps[k]` is the field applied `k` times.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub template_id: String,
    pub warp: WarpField,
    pub steps: Vec<Mesh>,
}

impl Trajectory {
    pub fn template(&self) -> &Mesh {
        &self.steps[0]
    }

    /// Number of deformed states (excluding the template).
    pub fn deformed_len(&self) -> usize {
        self.steps.len() - 1
    }
}

pub fn generate_trajectory(
    template_id: &str,
    template: &Mesh,
    field: &WarpField,
    n_steps: usize,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::Config("a trajectory needs at least one step".into()));
    }
    let mut steps = Vec::with_capacity(n_steps + 1);
    steps.push(template.clone());
    for k in 1..=n_steps {
        let next = apply_warp(&steps[k - 1], field)
            .map_err(|e| Error::Numeric(format!("trajectory step {k}: {e}")))?;
        steps.push(next);
    }
    Ok(Trajectory {
        template_id: template_id.to_string(),
        warp: field.clone(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::sample_warp_field;
    use crate::geometry::{chamfer_bruteforce, fixtures, sample_surface, topology_summary};

    #[test]
    fn one_step_is_one_application() {
        let m = fixtures::object("orange", 4).unwrap();
        let f = sample_warp_field(3, 0.05).unwrap();
        let t = generate_trajectory("orange", &m, &f, 1).unwrap();
        assert_eq!(t.steps.len(), 2);
        assert_eq!(t.steps[0], m);
        assert_eq!(t.steps[1], apply_warp(&m, &f).unwrap());
        assert!(generate_trajectory("orange", &m, &f, 0).is_err());
    }

    #[test]
    fn identity_field_keeps_template() {
        let m = fixtures::object("dice", 3).unwrap();
        let t = generate_trajectory("dice", &m, &WarpField::identity(), 50).unwrap();
        assert!(t.steps.iter().all(|s| *s == m));
    }

    #[test]
    fn composition_and_shared_topology() {
        let m = fixtures::object("hammer", 5).unwrap();
        let f = sample_warp_field(8, 0.05).unwrap();
        let t = generate_trajectory("hammer", &m, &f, 6).unwrap();
        assert_eq!(t.steps[2], apply_warp(&apply_warp(&m, &f).unwrap(), &f).unwrap());
        let topo = topology_summary(&m);
        for s in &t.steps {
            assert!(s.shares_faces_with(&m));
            assert_eq!(topology_summary(s), topo);
        }
        // reproducible from (seed, sigma, k)
        let again = generate_trajectory("hammer", &m, &sample_warp_field(8, 0.05).unwrap(), 6).unwrap();
        let c = |tr: &Trajectory| {
            chamfer_bruteforce(
                sample_surface(&tr.steps[5], 300, 1).unwrap().points(),
                sample_surface(tr.template(), 300, 1).unwrap().points(),
            )
        };
        assert_eq!(c(&t).to_bits(), c(&again).to_bits());
    }
}
