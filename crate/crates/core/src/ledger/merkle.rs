use crate::canonical::Digest;

/// Binary Merkle root. An odd node at any level is paired with itself; the
/// empty tree is all zeros and a single leaf is its own root.
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return Digest::ZERO;
    }
    let mut level: Vec<Digest> = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [left, right] => Digest::pair(left, right),
                [odd] => Digest::pair(odd, odd),
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}
