fn main() {
    std::process::exit(cdca_sim_cli::cli_main(std::env::args_os()));
}
