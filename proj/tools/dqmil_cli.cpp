// dqmil: data generation, training, evaluation, temperature ablation and
// attention export for the dual-query MIL model.

#include "dqmil/checkpoint.hpp"
#include "dqmil/data.hpp"
#include "dqmil/errors.hpp"
#include "dqmil/metrics.hpp"
#include "dqmil/train.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dqmil;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct GenDataArgs {
    SyntheticConfig synth;
    std::vector<double> ratios{0.8, 0.1, 0.1};
    fs::path out;
};

struct ModelArgs {
    std::string variant = "dq-sd";
    std::size_t latents = 16;
    std::size_t width = 256;
    std::size_t d_k = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t proj_width = 256;
    std::string embedding_source;
    double temperature = 0.0;
    double blend = 0.5;
};

struct TrainArgs {
    fs::path manifest;
    fs::path out;
    ModelArgs model;
    TrainConfig train;
    bool no_detach_teacher = false;
    bool keep_last = false;
    int precision = 32;
};

struct EvalArgs {
    fs::path checkpoint;
    fs::path manifest;
    std::string split = "test";
    fs::path report;
    bool json_only = false;
    std::size_t workers = 1;
};

struct ExportArgs {
    fs::path checkpoint;
    fs::path manifest;
    std::string split = "test";
    fs::path out;
    bool pgm = false;
    std::size_t workers = 1;
};

struct AblateArgs {
    TrainArgs base;
    bool fixed_only = false;
};

void add_model_options(CLI::App* cmd, ModelArgs& m)
{
    cmd->add_option("--variant", m.variant, "Training variant")
        ->check(CLI::IsMember({"mil-only", "perceiver-only", "dq-ce", "dq-sd"}))
        ->capture_default_str();
    cmd->add_option("--latents", m.latents, "Latent slots M")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--width", m.width, "Latent width D")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--d-k", m.d_k, "Key/query width d_k")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--depth", m.depth, "Latent transformer depth J")->capture_default_str();
    cmd->add_option("--heads", m.heads, "Attention heads (Q1 path and latent transformer)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--proj-width", m.proj_width, "Per-source projection width")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--embedding-source", m.embedding_source, "Use one source instead of fusing all");
    cmd->add_option("--temperature", m.temperature, "Cross-attention temperature; 0 means sqrt(d_k)")
        ->check(CLI::Range(0.0, 1e6))
        ->capture_default_str();
    cmd->add_option("--blend", m.blend, "Inference blend weight b")->check(CLI::Range(0.0, 1.0))->capture_default_str();
}

void add_train_options(CLI::App* cmd, TrainArgs& a)
{
    cmd->add_option("--manifest", a.manifest, "Dataset manifest")->required();
    cmd->add_option("--out", a.out, "Output directory")->required();
    add_model_options(cmd, a.model);
    auto& t = a.train;
    cmd->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--seed", t.seed, "Initialization and shuffling seed")->capture_default_str();
    cmd->add_option("--patience", t.patience, "Early-stopping patience in epochs; 0 disables")->capture_default_str();
    cmd->add_option("--lr", t.optim.lr, "Learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
    cmd->add_option("--weight-decay", t.optim.weight_decay, "Decoupled weight decay")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option("--beta1", t.optim.beta1, "RAdam beta1")->check(CLI::Range(0.0, 0.999999))->capture_default_str();
    cmd->add_option("--beta2", t.optim.beta2, "RAdam beta2")->check(CLI::Range(0.0, 0.999999))->capture_default_str();
    cmd->add_option("--lookahead-k", t.optim.lookahead_k, "Lookahead sync period")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--lookahead-alpha", t.optim.lookahead_alpha, "Lookahead slow-weight step")
        ->check(CLI::Range(1e-12, 1.0))
        ->capture_default_str();
    cmd->add_option("--clip-norm", t.optim.clip_norm, "Global gradient-norm clip; 0 disables")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option("--alpha", t.loss.alpha, "CE/KL balance of the MIL pathway")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cmd->add_option("--lambda", t.loss.lambda, "Hint loss weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    cmd->add_flag("--no-detach-teacher", a.no_detach_teacher, "Let the KL term update the Perceiver pathway");
    cmd->add_flag("--keep-last", a.keep_last, "Keep final-epoch weights instead of the best validation epoch");
    cmd->add_option("--precision", a.precision, "Training precision in bits")
        ->check(CLI::IsMember({32, 64}))
        ->capture_default_str();
    cmd->add_option("--workers", t.eval_workers, "Evaluation threads")->check(CLI::PositiveNumber)->capture_default_str();
}

DQConfig model_config(const ModelArgs& m, const Dataset& ds)
{
    DQConfig c;
    c.sources.clear();
    for (const auto& s : ds.sources) {
        c.sources.push_back({s.id, s.width, m.proj_width});
    }
    c.embedding_source = m.embedding_source;
    c.latents = m.latents;
    c.width = m.width;
    c.d_k = m.d_k;
    c.depth = m.depth;
    c.heads = m.heads;
    c.classes = ds.class_count();
    c.temperature = m.temperature;
    c.blend = m.blend;
    c.variant = parse_variant(m.variant);
    c.validate();
    return c;
}

void print_summary(const Dataset& ds, std::span<const Split> assignment)
{
    std::size_t counts[3] = {0, 0, 0};
    std::size_t instances = 0;
    std::size_t witnesses = 0;
    for (std::size_t i = 0; i < ds.bags.size(); ++i) {
        ++counts[static_cast<int>(assignment[i])];
        instances += ds.bags[i].instance_count();
        if (ds.bags[i].witness) {
            for (bool f : *ds.bags[i].witness) {
                witnesses += f ? 1 : 0;
            }
        }
    }
    std::vector<std::size_t> per_class(ds.class_count(), 0);
    for (const auto& b : ds.bags) {
        ++per_class[b.label];
    }
    std::printf("bags %zu (train %zu, val %zu, test %zu)\n", ds.bags.size(), counts[0], counts[1], counts[2]);
    std::printf("instances %zu, witnesses %zu\n", instances, witnesses);
    for (std::size_t k = 0; k < per_class.size(); ++k) {
        std::printf("class %-10s %zu bags\n", ds.class_names[k].c_str(), per_class[k]);
    }
    for (const auto& s : ds.sources) {
        std::printf("source %s width %zu\n", s.id.c_str(), s.width);
    }
}

int cmd_gen_data(const GenDataArgs& a)
{
    const Dataset ds = generate_synthetic(a.synth);
    const auto labels = ds.labels();
    const auto assignment = stratified_split(labels, a.ratios, a.synth.seed);
    write_dataset(ds, assignment, a.out);
    print_summary(ds, assignment);
    std::printf("wrote %s\n", (a.out / "manifest.jsonl").string().c_str());
    return 0;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path);
    if (!out || !(out << text)) {
        throw IoError("cannot write " + path.string());
    }
}

template <typename T>
Evaluation train_and_test(const TrainArgs& a, const Dataset& all_train, const Dataset& val, const Dataset& test,
                          double temperature_override, bool quiet, DQModel<float>* trained)
{
    DQConfig cfg = model_config(a.model, all_train);
    if (temperature_override > 0.0) {
        cfg.temperature = temperature_override;
    }
    DQModel<T> model(cfg, a.train.seed);
    TrainConfig tc = a.train;
    tc.loss.detach_teacher = !a.no_detach_teacher;
    tc.restore_best = !a.keep_last;
    tc.out_dir = a.out;
    if (!quiet) {
        tc.on_epoch = [](const EpochLog& e) {
            std::printf("epoch %3zu  loss %.4f  val_auc %.4f  val_acc %.4f%s\n", e.epoch, e.train_loss, e.val_auc,
                        e.val_accuracy, e.best ? "  *" : "");
            std::fflush(stdout);
        };
    }
    train(model, all_train, val.bags.empty() ? nullptr : &val, tc);
    save_checkpoint(model, a.out / "model.dqml");
    if (trained != nullptr) {
        *trained = model.template cast<float>();
    }
    if (test.bags.empty()) {
        return {};
    }
    return evaluate(model, test, a.train.eval_workers);
}

struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
};

Splits load_splits(const fs::path& manifest)
{
    Splits s{load_dataset(manifest, Split::Train), load_dataset(manifest, Split::Val),
             load_dataset(manifest, Split::Test)};
    if (s.train.bags.empty()) {
        throw EmptyInputError("manifest has no training bags");
    }
    return s;
}

int cmd_train(const TrainArgs& a)
{
    const Splits s = load_splits(a.manifest);
    const Evaluation ev = a.precision == 64 ? train_and_test<double>(a, s.train, s.val, s.test, 0.0, false, nullptr)
                                            : train_and_test<float>(a, s.train, s.val, s.test, 0.0, false, nullptr);
    std::printf("checkpoint %s\n", (a.out / "model.dqml").string().c_str());
    if (!s.test.bags.empty()) {
        write_text(a.out / "report.json", ev.report.to_json() + "\n");
        std::printf("test split\n%s", ev.report.to_table(s.test.class_names).c_str());
    }
    return 0;
}

void check_compatible(const DQConfig& cfg, const Dataset& ds)
{
    if (cfg.sources.size() != ds.sources.size()) {
        throw SchemaError("checkpoint expects " + std::to_string(cfg.sources.size()) + " sources, dataset has " +
                          std::to_string(ds.sources.size()));
    }
    for (std::size_t i = 0; i < ds.sources.size(); ++i) {
        if (cfg.sources[i].id != ds.sources[i].id || cfg.sources[i].width != ds.sources[i].width) {
            throw SchemaError("source '" + ds.sources[i].id + "' does not match the checkpoint");
        }
    }
    if (cfg.classes != ds.class_count()) {
        throw SchemaError("checkpoint has " + std::to_string(cfg.classes) + " classes, dataset has " +
                          std::to_string(ds.class_count()));
    }
}

int cmd_eval(const EvalArgs& a)
{
    if (!fs::exists(a.checkpoint)) {
        throw IoError("checkpoint " + a.checkpoint.string() + " does not exist");
    }
    const DQModel<float> model = load_checkpoint<float>(a.checkpoint);
    const Dataset ds = load_dataset(a.manifest, parse_split(a.split));
    check_compatible(model.config(), ds);
    const Evaluation ev = evaluate(model, ds, a.workers);
    const std::string json = ev.report.to_json();
    if (!a.report.empty()) {
        write_text(a.report, json + "\n");
    }
    if (a.json_only) {
        std::printf("%s\n", json.c_str());
    } else {
        std::printf("%s split\n%s", a.split.c_str(), ev.report.to_table(ds.class_names).c_str());
    }
    return 0;
}

int cmd_export_attention(const ExportArgs& a)
{
    if (!fs::exists(a.checkpoint)) {
        throw IoError("checkpoint " + a.checkpoint.string() + " does not exist");
    }
    const DQModel<float> model = load_checkpoint<float>(a.checkpoint);
    const Dataset ds = load_dataset(a.manifest, parse_split(a.split));
    check_compatible(model.config(), ds);
    if (ds.bags.empty()) {
        throw EmptyInputError("split '" + a.split + "' has no bags");
    }
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) {
        throw IoError("cannot create " + a.out.string() + ": " + ec.message());
    }
    const Evaluation ev = evaluate(model, ds, a.workers);
    std::size_t highlighted = 0;
    for (const auto& p : ev.predictions) {
        const AttentionExport e = export_attention(p.id, p.output.attention);
        write_attention_csv(e, a.out / (p.id + ".csv"));
        if (a.pgm) {
            write_attention_pgm(e, a.out / (p.id + ".pgm"));
        }
        for (bool m : e.mask) {
            highlighted += m ? 1 : 0;
        }
    }
    std::printf("exported %zu bags to %s (%zu highlighted instances)\n", ev.predictions.size(), a.out.string().c_str(),
                highlighted);
    if (ev.report.witness_recovery) {
        std::printf("witness recovery %.4f, uniform baseline %.4f, ratio %.2f\n", *ev.report.witness_recovery,
                    *ev.report.witness_baseline, *ev.report.witness_recovery / *ev.report.witness_baseline);
    }
    return 0;
}

double mean_entropy(const DQModel<float>& model, const Dataset& ds)
{
    double total = 0.0;
    for (const auto& bag : ds.bags) {
        total += attention_entropy(model.infer(bag.embeddings<float>(ds.sources)).attention_log);
    }
    return total / static_cast<double>(ds.bags.size());
}

int cmd_ablate_temperature(const AblateArgs& a)
{
    const Splits s = load_splits(a.base.manifest);
    const Dataset& eval_set = s.test.bags.empty() ? s.train : s.test;
    const double sqrt_dk = std::sqrt(static_cast<double>(a.base.model.d_k));
    const std::vector<std::pair<std::string, double>> grid = {
        {"sqrt(d_k)", sqrt_dk}, {"1", 1.0}, {"1/8", 0.125}, {"1/16", 0.0625}};

    // Reference model trained at sqrt(d_k); its entropy is measured at every tau without retraining.
    DQModel<float> reference(model_config(a.base.model, s.train), a.base.train.seed);
    std::vector<std::string> rows;
    std::ostringstream csv;
    csv << "tau_label,tau,auc,accuracy,entropy_trained,entropy_fixed\n";
    std::printf("%-10s %9s %8s %9s %16s %14s\n", "tau", "value", "auc", "accuracy", "entropy_trained",
                "entropy_fixed");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& [label, tau] = grid[i];
        double auc_value = std::nan("");
        double acc_value = std::nan("");
        double entropy_trained = std::nan("");
        if (!a.fixed_only || i == 0) {
            TrainArgs run = a.base;
            run.out = a.base.out / ("tau_" + std::to_string(i));
            DQModel<float> trained(model_config(a.base.model, s.train), 0);
            const Evaluation ev = train_and_test<float>(run, s.train, s.val, eval_set, tau, true, &trained);
            auc_value = ev.report.auc;
            acc_value = ev.report.accuracy;
            entropy_trained = mean_entropy(trained, eval_set);
            if (i == 0) {
                reference = std::move(trained);
            }
        }
        DQModel<float> fixed = reference;
        fixed.set_temperature(tau);
        const double entropy_fixed = mean_entropy(fixed, eval_set);
        std::printf("%-10s %9.4f %8.4f %9.4f %16.4f %14.4f\n", label.c_str(), tau, auc_value, acc_value,
                    entropy_trained, entropy_fixed);
        std::fflush(stdout);
        char line[200];
        std::snprintf(line, sizeof line, "%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", label.c_str(), tau, auc_value, acc_value,
                      entropy_trained, entropy_fixed);
        csv << line;
    }
    write_text(a.base.out / "temperature_ablation.csv", csv.str());
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dual-query Perceiver MIL with self-distillation"};
    app.set_config("--config", "", "TOML/INI file with option defaults; command-line flags take precedence");
    app.require_subcommand(1);
    app.get_formatter()->column_width(40);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic witness-bag dataset");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--bags", gen.synth.bags, "Bag count")->capture_default_str();
    gen_cmd->add_option("--min-instances", gen.synth.min_instances, "Smallest bag")->capture_default_str();
    gen_cmd->add_option("--max-instances", gen.synth.max_instances, "Largest bag")->capture_default_str();
    gen_cmd->add_option("--source-widths", gen.synth.source_widths, "Width of every feature source (e.g. 32 32 16)")
        ->delimiter(',')
        ->capture_default_str();
    gen_cmd->add_option("--witness-rate", gen.synth.witness_rate, "Witness fraction of a positive bag, in (0, 1]")
        ->capture_default_str();
    gen_cmd->add_option("--separation", gen.synth.separation, "Witness shift per coordinate, in noise units")
        ->capture_default_str();
    gen_cmd->add_option("--noise", gen.synth.noise, "Instance noise scale")->capture_default_str();
    gen_cmd->add_option("--classes", gen.synth.classes, "Class count K")->capture_default_str();
    gen_cmd->add_option("--components", gen.synth.background_components, "Background mixture components")
        ->capture_default_str();
    gen_cmd->add_option("--seed", gen.synth.seed, "Generator and split seed")->capture_default_str();
    gen_cmd->add_option("--split", gen.ratios, "train,val,test (or train,test) ratios")
        ->delimiter(',')
        ->capture_default_str();

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train a model and evaluate it on the test split");
    add_train_options(train_cmd, train_args);

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint")->required();
    eval_cmd->add_option("--manifest", eval_args.manifest, "Dataset manifest")->required();
    eval_cmd->add_option("--split", eval_args.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    eval_cmd->add_option("--report", eval_args.report, "Also write the JSON report here");
    eval_cmd->add_flag("--json", eval_args.json_only, "Print the JSON report instead of the table");
    eval_cmd->add_option("--workers", eval_args.workers, "Evaluation threads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    AblateArgs ablate;
    auto* ablate_cmd =
        app.add_subcommand("ablate-temperature", "Train and evaluate at tau in {sqrt(d_k), 1, 1/8, 1/16}");
    add_train_options(ablate_cmd, ablate.base);
    ablate.base.train.epochs = 30;
    ablate_cmd->add_flag("--fixed-only", ablate.fixed_only,
                         "Train only at sqrt(d_k) and report the other rows from that fixed model");

    ExportArgs export_args;
    auto* export_cmd = app.add_subcommand("export-attention", "Write normalized attention per bag (CSV, PGM)");
    export_cmd->add_option("--checkpoint", export_args.checkpoint, "Model checkpoint")->required();
    export_cmd->add_option("--manifest", export_args.manifest, "Dataset manifest")->required();
    export_cmd->add_option("--split", export_args.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    export_cmd->add_option("--out", export_args.out, "Output directory")->required();
    export_cmd->add_flag("--pgm", export_args.pgm, "Also write a grayscale strip per bag");
    export_cmd->add_option("--workers", export_args.workers, "Evaluation threads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen_cmd) {
            return cmd_gen_data(gen);
        }
        if (*train_cmd) {
            return cmd_train(train_args);
        }
        if (*eval_cmd) {
            return cmd_eval(eval_args);
        }
        if (*ablate_cmd) {
            return cmd_ablate_temperature(ablate);
        }
        if (*export_cmd) {
            return cmd_export_attention(export_args);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
