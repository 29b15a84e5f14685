//! BCM against a dense reference: shifted generalized power iterations on the
//! full `3n × 3n` connection matrix from a spectral start and random restarts.

mod common;

#[test]
fn matches_dense_reference_on_small_graphs() {
    common::checks::bcm_dense_oracle(50).unwrap();
}
