//! Runs the quicker examples end to end so they stay in sync with the API.

mod noisy_mvm {
    include!("../examples/noisy_mvm.rs");
}
mod perf_model {
    include!("../examples/perf_model.rs");
}
mod custom_network {
    include!("../examples/custom_network.rs");
}

#[test]
fn noisy_mvm_runs() {
    noisy_mvm::run_example().unwrap();
}

#[test]
fn perf_model_runs() {
    perf_model::run_example().unwrap();
}

#[test]
fn custom_network_runs() {
    custom_network::run_example().unwrap();
}
