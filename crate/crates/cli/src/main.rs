//! Batch front end for the semi-supervised domain adaptation lab:
//! dataset generation, training, analysis, and hyperparameter sweeps.

mod args;
mod commands;
mod manifest;

fn print_usage() {
    eprintln!(
        "usage: mme-lab <command> [flags]\n\
         \n\
         commands:\n\
         \x20 gen      --out DIR [--task gauss-shift|two-moons-shift] [--k N] [--dim N]\n\
         \x20          [--angle RAD] [--shift MAG] [--noise SIGMA] [--n-source N]\n\
         \x20          [--n-target N] [--shots N] [--seed N]\n\
         \x20 train    --data dataset.csv --out DIR [--method s+t|ent|dann|mme]\n\
         \x20          [--head cosine|linear] [--lambda X] [--temp X] [--seed N]\n\
         \x20          [--lr0 X] [--momentum X] [--batch-size N] [--max-iters N]\n\
         \x20          [--eval-every N] [--patience N] [--shots N] [--hidden 64,64]\n\
         \x20          [--feat-dim N] [--normalize-weights]\n\
         \x20 analyze  --what entropy|eig|adist|hdiv (--run DIR | --checkpoint model.json\n\
         \x20          --data dataset.csv) [--out DIR] [--seed N]\n\
         \x20 sweep    --param lambda --values 0.01,0.03,0.1 --seeds N\n\
         \x20          (plus train flags); MME_LAB_THREADS caps parallelism"
    );
}

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = argv.first() else {
        print_usage();
        std::process::exit(2);
    };
    let rest = &argv[1..];
    let result = match command.as_str() {
        "gen" => commands::cmd_gen(rest),
        "train" => commands::cmd_train(rest),
        "analyze" => commands::cmd_analyze(rest),
        "sweep" => commands::cmd_sweep(rest),
        "help" | "--help" | "-h" => {
            print_usage();
            return;
        }
        other => {
            eprintln!("unknown command {other:?}");
            print_usage();
            std::process::exit(2);
        }
    };
    if let Err((code, message)) = result {
        eprintln!("error: {message}");
        std::process::exit(code);
    }
}
