fn main() {
    std::process::exit(torus_pomle::cli::main_with_args(std::env::args_os()));
}
