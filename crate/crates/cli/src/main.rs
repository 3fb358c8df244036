fn main() {
    std::process::exit(embodied_sim::cli_run(std::env::args_os()));
}
