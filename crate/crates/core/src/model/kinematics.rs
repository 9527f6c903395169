use super::{MskModel, Vec2};

/// Rotates `v` counter-clockwise by `angle`.
#[inline]
pub fn rot(angle: f64, v: Vec2) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Derivative of `rot(θ, v)` with respect to θ at θ = 0.
#[inline]
pub fn perp(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

/// World pose of every link for one configuration.
#[derive(Debug, Clone)]
pub struct LinkPoses {
    pub origin: Vec<Vec2>,
    pub angle: Vec<f64>,
}

/// World-frame kinematics of one mimic site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteKinematics {
    pub pos: Vec2,
    pub rot: f64,
    pub linvel: Vec2,
    pub angvel: f64,
}

impl LinkPoses {
    /// Origin and angle of a link reference (`None` = world).
    #[inline]
    pub fn frame(&self, link: Option<usize>) -> (Vec2, f64) {
        match link {
            None => (Vec2::zeros(), 0.0),
            Some(l) => (self.origin[l], self.angle[l]),
        }
    }

    #[inline]
    pub fn point(&self, link: Option<usize>, local: Vec2) -> Vec2 {
        let (o, a) = self.frame(link);
        o + rot(a, local)
    }
}

impl MskModel {
    /// Forward kinematics of all link frames.
    pub fn link_poses(&self, q: &[f64]) -> LinkPoses {
        debug_assert_eq!(q.len(), self.n_dof());
        let n = self.links.len();
        let mut origin = vec![Vec2::zeros(); n];
        let mut angle = vec![0.0; n];
        let n_root = self.n_root();
        for &l in &self.topo.order {
            match self.topo.parent_joint[l] {
                None => {
                    origin[l] = Vec2::new(q[0], q[1]);
                    angle[l] = q[2];
                }
                Some(j) => {
                    let anchor = Vec2::new(self.joints[j].axis_anchor[0], self.joints[j].axis_anchor[1]);
                    let (po, pa) = match self.topo.joint_parent[j] {
                        None => (Vec2::zeros(), 0.0),
                        Some(p) => (origin[p], angle[p]),
                    };
                    origin[l] = po + rot(pa, anchor);
                    angle[l] = pa + q[n_root + j];
                }
            }
        }
        LinkPoses { origin, angle }
    }

    /// Fills `cols[c]` with ∂p/∂q_c for a world point `p` rigidly attached to `link`.
    pub fn point_jacobian(&self, poses: &LinkPoses, link: Option<usize>, p: Vec2, cols: &mut [Vec2]) {
        debug_assert_eq!(cols.len(), self.n_dof());
        cols.iter_mut().for_each(|c| *c = Vec2::zeros());
        let Some(l) = link else { return };
        if self.root_free {
            cols[0] = Vec2::new(1.0, 0.0);
            cols[1] = Vec2::new(0.0, 1.0);
        }
        for &c in &self.topo.link_rot_coords[l] {
            let center = poses.origin[self.topo.coord_center[c].expect("rotational coordinate")];
            cols[c] = perp(p - center);
        }
    }

    /// Angular velocity of each link.
    pub fn link_angvel(&self, qd: &[f64]) -> Vec<f64> {
        self.topo
            .link_rot_coords
            .iter()
            .map(|coords| coords.iter().map(|&c| qd[c]).sum())
            .collect()
    }

    /// World velocity of a point rigidly attached to `link`.
    pub fn point_velocity(&self, poses: &LinkPoses, link: Option<usize>, p: Vec2, qd: &[f64]) -> Vec2 {
        let Some(l) = link else { return Vec2::zeros() };
        let mut v = if self.root_free { Vec2::new(qd[0], qd[1]) } else { Vec2::zeros() };
        for &c in &self.topo.link_rot_coords[l] {
            let center = poses.origin[self.topo.coord_center[c].expect("rotational coordinate")];
            v += perp(p - center) * qd[c];
        }
        v
    }

    /// Positions, orientations and velocities of all mimic sites.
    pub fn site_kinematics(&self, q: &[f64], qd: &[f64]) -> Vec<SiteKinematics> {
        let poses = self.link_poses(q);
        let omega = self.link_angvel(qd);
        self.sites
            .iter()
            .zip(&self.topo.site_links)
            .map(|(s, &link)| {
                let pos = poses.point(link, Vec2::new(s.offset[0], s.offset[1]));
                let (_, rot) = poses.frame(link);
                let angvel = link.map_or(0.0, |l| omega[l]);
                let linvel = self.point_velocity(&poses, link, pos, qd);
                SiteKinematics { pos, rot, linvel, angvel }
            })
            .collect()
    }

    /// World positions of all contact probes.
    pub fn probe_positions(&self, q: &[f64]) -> Vec<Vec2> {
        let poses = self.link_poses(q);
        self.topo
            .probes
            .iter()
            .map(|&(l, p)| poses.point(Some(l), p))
            .collect()
    }

    /// Lowest contact-probe height, or `None` when the model has no probes.
    pub fn min_probe_height(&self, q: &[f64]) -> Option<f64> {
        self.probe_positions(q).iter().map(|p| p.y).reduce(f64::min)
    }

    /// World center of mass of each link.
    pub fn link_coms(&self, poses: &LinkPoses) -> Vec<Vec2> {
        self.links
            .iter()
            .enumerate()
            .map(|(l, link)| poses.point(Some(l), Vec2::new(link.com[0], link.com[1])))
            .collect()
    }
}
