//! Skeleton topology: the joint tree, limb groupings and channel naming.
//!
//! Every joint contributes three Euler-angle channels named `JOINT.x`,
//! `JOINT.y`, `JOINT.z`, laid out joint-major in the order the joints are
//! listed. The topology is also where the assumption sets of the equation
//! system come from: the kinematic tree gives serial and two-hop neighbours,
//! limb pairs give homologous partners on the opposite side.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GomError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    fn from_suffix(s: &str) -> Option<Axis> {
        match s {
            "x" | "X" => Some(Axis::X),
            "y" | "Y" => Some(Axis::Y),
            "z" | "Z" => Some(Axis::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

/// On-disk form of a topology.
///
/// `limb_pairs` and `nonserial` are optional. When `limb_pairs` is absent,
/// the pairs `left-arm/right-arm` and `left-leg/right-leg` are used for
/// whichever of those limbs exist. `nonserial` lists extra non-serial
/// partners per joint on top of the two-hop chain neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub joints: Vec<String>,
    #[serde(default)]
    pub parent: BTreeMap<String, String>,
    pub limbs: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limb_pairs: Option<Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub nonserial: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct SkeletonTopology {
    doc: TopologyDoc,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    limb_names: Vec<String>,
    limb_of: Vec<usize>,
    /// Joints of each limb, ordered by tree depth.
    limb_chain: Vec<Vec<usize>>,
    mirror_limb: Vec<Option<usize>>,
    extra_nonserial: Vec<Vec<usize>>,
    channel_names: Vec<String>,
}

impl PartialEq for SkeletonTopology {
    fn eq(&self, other: &Self) -> bool {
        self.doc == other.doc
    }
}

const DEFAULT_JOINTS: [(&str, Option<&str>, &str); 19] = [
    ("H", None, "spine"),
    ("SP", Some("H"), "spine"),
    ("SP1", Some("SP"), "spine"),
    ("SP2", Some("SP1"), "spine"),
    ("SP3", Some("SP2"), "spine"),
    ("NK", Some("SP3"), "spine"),
    ("HD", Some("NK"), "spine"),
    ("LSH1", Some("SP3"), "left-arm"),
    ("LSH2", Some("LSH1"), "left-arm"),
    ("LA", Some("LSH2"), "left-arm"),
    ("LFA", Some("LA"), "left-arm"),
    ("RSH1", Some("SP3"), "right-arm"),
    ("RSH2", Some("RSH1"), "right-arm"),
    ("RA", Some("RSH2"), "right-arm"),
    ("RFA", Some("RA"), "right-arm"),
    ("LUL", Some("H"), "left-leg"),
    ("LCA", Some("LUL"), "left-leg"),
    ("RUL", Some("H"), "right-leg"),
    ("RCA", Some("RUL"), "right-leg"),
];

impl Default for SkeletonTopology {
    /// The 19-sensor full-body skeleton (57 channels), without fingers and feet.
    fn default() -> Self {
        let mut parent = BTreeMap::new();
        let mut limbs: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (joint, par, limb) in DEFAULT_JOINTS {
            if let Some(p) = par {
                parent.insert(joint.to_string(), p.to_string());
            }
            limbs.entry(limb.to_string()).or_default().push(joint.to_string());
        }
        let mut nonserial = BTreeMap::new();
        nonserial.insert("H".to_string(), vec!["SP3".to_string()]);
        let doc = TopologyDoc {
            joints: DEFAULT_JOINTS.iter().map(|j| j.0.to_string()).collect(),
            parent,
            limbs,
            limb_pairs: None,
            nonserial,
        };
        SkeletonTopology::from_doc(doc).expect("default topology is valid")
    }
}

impl SkeletonTopology {
    pub fn from_doc(doc: TopologyDoc) -> Result<Self> {
        let bad = |msg: String| GomError::Topology(msg);
        if doc.joints.is_empty() {
            return Err(bad("no joints".into()));
        }
        let mut index = HashMap::new();
        for (i, j) in doc.joints.iter().enumerate() {
            if j.is_empty() || j.contains('.') || j.contains(',') {
                return Err(bad(format!("invalid joint name {j:?}")));
            }
            if index.insert(j.clone(), i).is_some() {
                return Err(bad(format!("duplicate joint {j:?}")));
            }
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| bad(format!("unknown joint {name:?}")))
        };

        let n = doc.joints.len();
        let mut parent = vec![None; n];
        for (child, par) in &doc.parent {
            let c = lookup(child)?;
            let p = lookup(par)?;
            if c == p {
                return Err(bad(format!("joint {child:?} is its own parent")));
            }
            parent[c] = Some(p);
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(bad(format!("expected exactly one root joint, found {}", roots.len())));
        }
        let mut depth = vec![0usize; n];
        for (i, d) in depth.iter_mut().enumerate() {
            let mut cur = i;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(bad(format!("cycle through joint {:?}", doc.joints[i])));
                }
            }
            *d = steps;
        }
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(i);
            }
        }

        let limb_names: Vec<String> = doc.limbs.keys().cloned().collect();
        let mut limb_of = vec![usize::MAX; n];
        let mut limb_chain = Vec::with_capacity(limb_names.len());
        for (li, name) in limb_names.iter().enumerate() {
            let mut members = Vec::new();
            for j in &doc.limbs[name] {
                let ji = lookup(j)?;
                if limb_of[ji] != usize::MAX {
                    return Err(bad(format!("joint {j:?} belongs to more than one limb")));
                }
                limb_of[ji] = li;
                members.push(ji);
            }
            // stable sort keeps the listing order among equal depths
            members.sort_by_key(|&j| depth[j]);
            limb_chain.push(members);
        }
        if let Some(j) = (0..n).find(|&j| limb_of[j] == usize::MAX) {
            return Err(bad(format!("joint {:?} belongs to no limb", doc.joints[j])));
        }

        let limb_index = |name: &str| limb_names.iter().position(|l| l == name);
        let pairs: Vec<(usize, usize)> = match &doc.limb_pairs {
            Some(pairs) => pairs
                .iter()
                .map(|(a, b)| match (limb_index(a), limb_index(b)) {
                    (Some(a), Some(b)) if a != b => Ok((a, b)),
                    _ => Err(bad(format!("invalid limb pair ({a:?}, {b:?})"))),
                })
                .collect::<Result<_>>()?,
            None => [("left-arm", "right-arm"), ("left-leg", "right-leg")]
                .iter()
                .filter_map(|(a, b)| Some((limb_index(a)?, limb_index(b)?)))
                .collect(),
        };
        let mut mirror_limb = vec![None; limb_names.len()];
        for (a, b) in pairs {
            if mirror_limb[a].is_some() || mirror_limb[b].is_some() {
                return Err(bad("a limb appears in more than one pair".into()));
            }
            mirror_limb[a] = Some(b);
            mirror_limb[b] = Some(a);
        }

        let mut extra_nonserial = vec![Vec::new(); n];
        for (joint, partners) in &doc.nonserial {
            let ji = lookup(joint)?;
            for p in partners {
                let pi = lookup(p)?;
                if pi == ji {
                    return Err(bad(format!("joint {joint:?} listed as its own partner")));
                }
                if !extra_nonserial[ji].contains(&pi) {
                    extra_nonserial[ji].push(pi);
                }
            }
        }

        let channel_names = doc
            .joints
            .iter()
            .flat_map(|j| Axis::ALL.iter().map(move |a| format!("{j}.{a}")))
            .collect();

        Ok(SkeletonTopology {
            doc,
            index,
            parent,
            children,
            depth,
            limb_names,
            limb_of,
            limb_chain,
            mirror_limb,
            extra_nonserial,
            channel_names,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GomError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("topology serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| GomError::io(path, e))
    }

    pub fn doc(&self) -> &TopologyDoc {
        &self.doc
    }

    pub fn joints(&self) -> &[String] {
        &self.doc.joints
    }

    pub fn joint_count(&self) -> usize {
        self.doc.joints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn children(&self, joint: usize) -> &[usize] {
        &self.children[joint]
    }

    pub fn depth(&self, joint: usize) -> usize {
        self.depth[joint]
    }

    pub fn root(&self) -> usize {
        self.parent.iter().position(Option::is_none).expect("validated")
    }

    pub fn limb_name(&self, joint: usize) -> &str {
        &self.limb_names[self.limb_of[joint]]
    }

    /// Number of channels, three per joint.
    pub fn channel_count(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel_index(&self, joint: usize, axis: Axis) -> usize {
        joint * 3 + axis.index()
    }

    pub fn channel_of(&self, channel: usize) -> (usize, Axis) {
        (channel / 3, Axis::ALL[channel % 3])
    }

    pub fn channel_name(&self, channel: usize) -> &str {
        &self.channel_names[channel]
    }

    /// Parses `JOINT.axis` into a channel index.
    pub fn channel_by_name(&self, name: &str) -> Result<usize> {
        let unknown = || GomError::UnknownChannel(name.to_string());
        let (joint, axis) = name.rsplit_once('.').ok_or_else(unknown)?;
        let j = self.joint_index(joint).ok_or_else(unknown)?;
        let a = Axis::from_suffix(axis).ok_or_else(unknown)?;
        Ok(self.channel_index(j, a))
    }

    /// Joint at the same chain position on the paired limb, if any.
    pub fn mirror(&self, joint: usize) -> Option<usize> {
        let limb = self.limb_of[joint];
        let other = self.mirror_limb[limb]?;
        let pos = self.limb_chain[limb].iter().position(|&j| j == joint)?;
        self.limb_chain[other].get(pos).copied()
    }

    /// Parent and children.
    pub fn serial_neighbours(&self, joint: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.parent[joint].into_iter().collect();
        out.extend_from_slice(&self.children[joint]);
        out.sort_unstable();
        out
    }

    /// Grandparent, grandchildren and any configured extra partners.
    pub fn nonserial_neighbours(&self, joint: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(gp) = self.parent[joint].and_then(|p| self.parent[p]) {
            out.push(gp);
        }
        for &c in &self.children[joint] {
            out.extend_from_slice(&self.children[c]);
        }
        out.extend_from_slice(&self.extra_nonserial[joint]);
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_57_channels() {
        let t = SkeletonTopology::default();
        assert_eq!(t.joint_count(), 19);
        assert_eq!(t.channel_count(), 57);
        assert_eq!(t.joints()[t.root()], "H");
        assert_eq!(t.channel_name(2), "H.z");
        assert_eq!(t.channel_by_name("LSH2.x").unwrap(), 8 * 3);
    }

    #[test]
    fn mirror_pairs_follow_chain_position() {
        let t = SkeletonTopology::default();
        let j = |n| t.joint_index(n).unwrap();
        assert_eq!(t.mirror(j("LSH2")), Some(j("RSH2")));
        assert_eq!(t.mirror(j("RFA")), Some(j("LFA")));
        assert_eq!(t.mirror(j("LCA")), Some(j("RCA")));
        assert_eq!(t.mirror(j("SP2")), None);
    }

    #[test]
    fn json_round_trip() {
        let t = SkeletonTopology::default();
        let back = SkeletonTopology::from_json_str(&t.to_json_string()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn rejects_two_roots_and_orphan_limbs() {
        let two_roots = r#"{"joints":["A","B"],"parent":{},"limbs":{"spine":["A","B"]}}"#;
        assert!(SkeletonTopology::from_json_str(two_roots).is_err());
        let no_limb = r#"{"joints":["A","B"],"parent":{"B":"A"},"limbs":{"spine":["A"]}}"#;
        assert!(SkeletonTopology::from_json_str(no_limb).is_err());
        let cycle = r#"{"joints":["A","B","C"],"parent":{"B":"C","C":"B"},"limbs":{"spine":["A","B","C"]}}"#;
        assert!(SkeletonTopology::from_json_str(cycle).is_err());
    }

    #[test]
    fn unknown_channel_names() {
        let t = SkeletonTopology::default();
        assert!(t.channel_by_name("H.w").is_err());
        assert!(t.channel_by_name("XX.x").is_err());
        assert!(t.channel_by_name("Hx").is_err());
    }
}
