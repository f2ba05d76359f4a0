fn main() {
    std::process::exit(robust_mdp_cli::cli_main(std::env::args_os()));
}
