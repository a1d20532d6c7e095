fn main() {
    std::process::exit(mmwave_sr::cli::run_from_env());
}
