mod common;

use common::gradcheck;

#[test]
fn dense_algebra() {
    gradcheck::dense_algebra();
}

#[test]
fn activations_and_normalisation() {
    gradcheck::activations_and_normalisation();
}

#[test]
fn reshaping_and_grouping() {
    gradcheck::reshaping_and_grouping();
}

#[test]
fn reductions_and_losses() {
    gradcheck::reductions_and_losses();
}

#[test]
fn transformer_layer_eval() {
    gradcheck::transformer_layer_eval();
}

#[test]
fn transformer_layer_with_dropout() {
    gradcheck::transformer_layer_with_dropout();
}

#[test]
fn transformer_layer_masked_without_residual() {
    gradcheck::transformer_layer_masked_without_residual();
}

#[test]
fn heads() {
    gradcheck::heads();
}

#[test]
fn whole_encoder() {
    gradcheck::whole_encoder();
}
