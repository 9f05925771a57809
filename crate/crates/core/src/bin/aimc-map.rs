fn main() -> std::process::ExitCode {
    aimc_map::cli::main()
}
