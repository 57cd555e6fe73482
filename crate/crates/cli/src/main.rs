fn main() {
    std::process::exit(depthnull_cli::app::run(std::env::args_os()));
}
