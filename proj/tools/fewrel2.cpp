// Command-line front end: corpus generation, training, evaluation, reports.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fewrel/fewrel.hpp"

namespace fs = std::filesystem;
using namespace fewrel;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
};

void add_config_args(CLI::App* sub, ConfigArgs& a) {
  sub->add_option("--config", a.path, "INI run configuration")->required()->check(CLI::ExistingFile);
  sub->add_option("--set", a.sets, "override, section.key=value (repeatable)");
}

RunConfig resolve_config(const ConfigArgs& a) {
  RunConfig cfg = load_config(a.path);
  for (const auto& s : a.sets) apply_override(cfg, s);
  cfg.validate();
  return cfg;
}

std::string stem_or(const std::string& path, const std::string& fallback) {
  return path.empty() ? fallback : fs::path(path).stem().string();
}

ReportFormat format_for(const std::string& out, const std::string& explicit_fmt) {
  if (!explicit_fmt.empty()) return parse_report_format(explicit_fmt);
  const std::string ext = fs::path(out).extension().string();
  if (ext == ".json") return ReportFormat::json;
  if (ext == ".md") return ReportFormat::markdown;
  if (ext == ".svg") return ReportFormat::svg;
  return ReportFormat::csv;
}

void write_output(const EvalReport& rep, const std::string& out, const std::string& fmt,
                  const std::string& checkpoint) {
  if (out.empty()) {
    std::cout << render_report(rep, fmt.empty() ? ReportFormat::markdown : parse_report_format(fmt));
    return;
  }
  emit_report(rep, format_for(out, fmt), out);
  if (!checkpoint.empty()) register_report(checkpoint, out);
  std::cerr << "wrote " << out << "\n";
}

struct Loaded {
  RunConfig cfg;
  Corpora data;
  TrainedModel model;
};

Loaded load_for_eval(const ConfigArgs& ca, const std::string& checkpoint) {
  Loaded l{resolve_config(ca), {}, load_trained(checkpoint)};
  check_compatible(l.model, l.cfg);
  l.data = load_corpora(l.cfg);
  return l;
}

const Dataset& eval_corpus(const Loaded& l) {
  if (!l.data.test) throw ConfigError("corpus.test is required for evaluation");
  return *l.data.test;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot relation classification with NOTA detection and domain adaptation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // gen-synthetic
  std::string spec_text, gen_out;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic corpus");
  gen->add_option("--spec", spec_text,
                  "key=value list: relations, instances, vocab, len, signal, prefix, offset, names (a|b|c)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output JSON path")->required();

  // train
  ConfigArgs train_args;
  std::optional<std::uint64_t> train_seed;
  auto* tr = app.add_subcommand("train", "train a model and write its checkpoint");
  add_config_args(tr, train_args);
  tr->add_option("--seed", train_seed, "master seed override");

  // eval
  ConfigArgs eval_args;
  std::string eval_ckpt, eval_out, eval_fmt;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on corpus.test");
  add_config_args(ev, eval_args);
  ev->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--out", eval_out, "report path (format from extension unless --format)");
  ev->add_option("--format", eval_fmt, "csv|json|markdown|svg");

  // sweep-nota
  ConfigArgs sweep_args;
  std::string sweep_ckpt, sweep_out, sweep_fmt, sweep_rates = "0,0.15,0.3,0.5";
  auto* sw = app.add_subcommand("sweep-nota", "evaluate across NOTA rates on one seed schedule");
  add_config_args(sw, sweep_args);
  sw->add_option("--checkpoint", sweep_ckpt)->required()->check(CLI::ExistingFile);
  sw->add_option("--rates", sweep_rates, "comma-separated NOTA rates")->capture_default_str();
  sw->add_option("--out", sweep_out);
  sw->add_option("--format", sweep_fmt);

  // da-eval
  ConfigArgs da_args;
  std::string da_ckpt, da_out, da_fmt, da_source, da_target;
  auto* da = app.add_subcommand("da-eval", "paired evaluation on source and target corpora");
  add_config_args(da, da_args);
  da->add_option("--checkpoint", da_ckpt)->required()->check(CLI::ExistingFile);
  da->add_option("--source", da_source, "source-domain corpus (default corpus.test)")->check(CLI::ExistingFile);
  da->add_option("--target", da_target, "target-domain corpus (default corpus.cross_domain)")
      ->check(CLI::ExistingFile);
  da->add_option("--out", da_out);
  da->add_option("--format", da_fmt);

  // report
  std::string rep_in, rep_out, rep_fmt = "markdown";
  auto* rp = app.add_subcommand("report", "convert a CSV or JSON report");
  rp->add_option("--in", rep_in, "CSV or JSON report")->required()->check(CLI::ExistingFile);
  rp->add_option("--format", rep_fmt, "csv|json|markdown|svg")->capture_default_str();
  rp->add_option("--out", rep_out, "output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const Dataset ds = gen_synthetic(parse_synthetic_spec(spec_text), gen_seed);
      save_dataset(ds, gen_out);
      std::cerr << "wrote " << ds.num_relations() << " relations to " << gen_out << "\n";
    } else if (*tr) {
      RunConfig cfg = load_config(train_args.path);
      for (const auto& s : train_args.sets) apply_override(cfg, s);
      if (train_seed) cfg.seed = *train_seed;
      cfg.validate();
      const TrainResult res = train_to_checkpoint(cfg, &std::cerr);
      std::cerr << "wrote " << res.manifest.checkpoint << " (config " << res.manifest.config_hash << ")\n";
    } else if (*ev) {
      const Loaded l = load_for_eval(eval_args, eval_ckpt);
      const EvalReport rep = nota_sweep(l.model, l.cfg, eval_corpus(l), l.data.train, l.cfg.eval.nota_rates,
                                        stem_or(l.cfg.corpus.test, "test"));
      write_output(rep, eval_out, eval_fmt, eval_ckpt);
    } else if (*sw) {
      const Loaded l = load_for_eval(sweep_args, sweep_ckpt);
      const auto rates = parse_rate_list(sweep_rates, "--rates");
      const EvalReport rep =
          nota_sweep(l.model, l.cfg, eval_corpus(l), l.data.train, rates, stem_or(l.cfg.corpus.test, "test"));
      write_output(rep, sweep_out, sweep_fmt, sweep_ckpt);
    } else if (*da) {
      const Loaded l = load_for_eval(da_args, da_ckpt);
      const Dataset source = da_source.empty() ? eval_corpus(l) : load_dataset(da_source).dataset;
      std::optional<Dataset> target;
      if (!da_target.empty()) target = load_dataset(da_target).dataset;
      else if (l.data.cross_domain) target = *l.data.cross_domain;
      else throw ConfigError("da-eval needs --target or corpus.cross_domain");
      const std::string sname = stem_or(da_source.empty() ? l.cfg.corpus.test : da_source, "source");
      std::string tname = stem_or(da_target.empty() ? l.cfg.corpus.cross_domain : da_target, "target");
      if (tname == sname) tname += " (target)";
      const EvalReport rep = da_eval(l.model, l.cfg, source, *target, l.data.train, sname, tname);
      write_output(rep, da_out, da_fmt, da_ckpt);
    } else if (*rp) {
      const EvalReport rep = read_report(rep_in);
      const ReportFormat f = parse_report_format(rep_fmt);
      if (rep_out.empty()) std::cout << render_report(rep, f);
      else emit_report(rep, f, rep_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
