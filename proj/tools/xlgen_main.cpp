// xlgen: label-sequence generation for extreme multi-label classification.
// Subcommands cover the whole pipeline: gen-data, cluster, train, predict,
// eval, export-embeddings, sweep.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xlgen/pipeline.hpp"

using namespace xlgen;

namespace {

std::vector<std::uint64_t> parse_u64_list(const std::vector<std::string>& in) {
  std::vector<std::uint64_t> out;
  for (const auto& s : in) out.push_back(std::stoull(s));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xlgen: extreme multi-label text classification as label generation"};
  app.require_subcommand(1);
  app.fallthrough();  // global options like --config remain usable after a subcommand
  app.set_config("--config", "", "key=value config file with [subcommand] sections");
  bool show_config = false;
  app.add_flag("--show-config", show_config, "print the effective configuration and exit");

  // ---- gen-data
  pipeline::GenDataConfig gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic benchmark");
  cmd_gen->add_option("--out", gen.out_dir, "output directory")->capture_default_str();
  cmd_gen->add_option("--docs", gen.synth.n_docs)->capture_default_str();
  cmd_gen->add_option("--labels", gen.synth.n_labels)->capture_default_str();
  cmd_gen->add_option("--clusters", gen.synth.n_clusters)->capture_default_str();
  cmd_gen->add_option("--vocab", gen.synth.vocab_size)->capture_default_str();
  cmd_gen->add_option("--min-labels", gen.synth.labels_per_doc_min)->capture_default_str();
  cmd_gen->add_option("--max-labels", gen.synth.labels_per_doc_max)->capture_default_str();
  cmd_gen->add_option("--unseen", gen.synth.unseen_label_count)->capture_default_str();
  cmd_gen->add_option("--seed", gen.synth.seed)->envname("XLGEN_SEED")->capture_default_str();
  cmd_gen->add_flag("--force", gen.force, "overwrite a non-empty output directory");

  // ---- cluster
  pipeline::ClusterCmdConfig clu;
  auto* cmd_clu = app.add_subcommand("cluster", "fit the K-means label clustering");
  cmd_clu->add_option("--data", clu.data_dir)->capture_default_str();
  cmd_clu->add_option("--out", clu.out_path)->capture_default_str();
  cmd_clu->add_option("--k", clu.k)->capture_default_str();
  cmd_clu->add_option("--seed", clu.seed)->envname("XLGEN_SEED")->capture_default_str();
  cmd_clu->add_option("--restarts", clu.kmeans.restarts)->capture_default_str();
  cmd_clu->add_option("--max-iter", clu.kmeans.max_iter)->capture_default_str();
  cmd_clu->add_option("--tol", clu.kmeans.tol)->capture_default_str();
  cmd_clu->add_option("--features", clu.features, "tfidf | encoder")->capture_default_str();
  cmd_clu->add_option("--checkpoint", clu.checkpoint, "model for encoder features");
  cmd_clu->add_option("--pu-rate", clu.pu_rate, "train-side label deficit rate");
  cmd_clu->add_option("--pu-seed", clu.pu_seed)->capture_default_str();

  // ---- train
  pipeline::TrainCmdConfig tr;
  std::string tr_mode = "base", tr_order = "frequency", tr_pooling = "mean", tr_cseq = "asc";
  bool tr_untie = false;
  auto* cmd_tr = app.add_subcommand("train", "train a model");
  cmd_tr->add_option("--data", tr.data_dir)->capture_default_str();
  cmd_tr->add_option("--mode", tr_mode, "base | bcl | mcg")->capture_default_str();
  cmd_tr->add_option("--cluster", tr.cluster_path, "cluster model JSON (bcl/mcg)");
  cmd_tr->add_option("--out-model", tr.out_model)->capture_default_str();
  cmd_tr->add_option("--out-log", tr.out_log)->capture_default_str();
  cmd_tr->add_option("--d-model", tr.model.d_model)->capture_default_str();
  cmd_tr->add_option("--layers", tr.model.n_layers)->capture_default_str();
  cmd_tr->add_option("--heads", tr.model.n_heads)->capture_default_str();
  cmd_tr->add_option("--ff", tr.model.ff_dim)->capture_default_str();
  cmd_tr->add_option("--max-input", tr.model.max_input_len)->capture_default_str();
  cmd_tr->add_option("--max-output", tr.model.max_output_len)->capture_default_str();
  cmd_tr->add_option("--pooling", tr_pooling, "bcl head pooling: mean | max")
      ->capture_default_str();
  cmd_tr->add_flag("--untie", tr_untie, "untie the output projection from the embeddings");
  cmd_tr->add_option("--epochs", tr.train.epochs)->capture_default_str();
  cmd_tr->add_option("--lr", tr.train.lr)->capture_default_str();
  cmd_tr->add_option("--batch-size", tr.train.batch_size)->capture_default_str();
  cmd_tr->add_option("--seed", tr.train.seed)->envname("XLGEN_SEED")->capture_default_str();
  cmd_tr->add_option("--lambda0", tr.train.lambda_initial)->capture_default_str();
  cmd_tr->add_option("--weight-decay", tr.train.weight_decay)->capture_default_str();
  cmd_tr->add_option("--order", tr_order, "frequency | inverse | shuffle | pos_invariant")
      ->capture_default_str();
  cmd_tr->add_option("--cluster-seq", tr_cseq, "mcg cluster-id order: asc | freq")
      ->capture_default_str();
  cmd_tr->add_option("--pu-rate", tr.pu_rate, "train-side label deficit rate");
  cmd_tr->add_option("--pu-seed", tr.pu_seed)->capture_default_str();

  // ---- predict
  pipeline::PredictCmdConfig pr;
  auto* cmd_pr = app.add_subcommand("predict", "generate label predictions");
  cmd_pr->add_option("--data", pr.data_dir)->capture_default_str();
  cmd_pr->add_option("--split", pr.split)->capture_default_str();
  cmd_pr->add_option("--model", pr.model_path)->capture_default_str();
  cmd_pr->add_option("--out", pr.out_path)->capture_default_str();
  cmd_pr->add_option("--strategy", pr.strategy,
                     "greedy | beam:W | temp:T | topk:K | topp:P | toppk:P,K | sample:...")
      ->capture_default_str();
  cmd_pr->add_option("--seed", pr.seed)->envname("XLGEN_SEED")->capture_default_str();
  cmd_pr->add_flag("--restrict-known", pr.restrict_to_known,
                   "drop generated labels absent from the train label set");
  cmd_pr->add_flag("--oracle-clusters", pr.oracle_clusters,
                   "mcg: use gold clusters instead of stage-1 predictions");
  cmd_pr->add_option("--cluster", pr.cluster_path, "cluster model (for --oracle-clusters)");
  cmd_pr->add_option("--ensemble", pr.ensemble, "pu-default: beam:5 + toppk:0.9,50 + temp:0.8");
  cmd_pr->add_option("--join", pr.join, "union | intersection")->capture_default_str();

  // ---- eval
  pipeline::EvalCmdConfig ev;
  bool ev_stats = false;
  auto* cmd_ev = app.add_subcommand("eval", "evaluate predictions");
  cmd_ev->add_option("--data", ev.data_dir)->capture_default_str();
  cmd_ev->add_option("--split", ev.split)->capture_default_str();
  cmd_ev->add_option("--pred", ev.pred_path)->capture_default_str();
  cmd_ev->add_option("--out-report", ev.out_report)->capture_default_str();
  cmd_ev->add_option("--out-table", ev.out_table)->capture_default_str();
  cmd_ev->add_option("--pu-rate", ev.pu_rate, "deficit for the train stats view only");
  cmd_ev->add_option("--pu-seed", ev.pu_seed)->capture_default_str();
  cmd_ev->add_flag("--stats", ev_stats, "print dataset statistics and exit");

  // ---- export-embeddings
  pipeline::ExportCmdConfig ex;
  auto* cmd_ex = app.add_subcommand("export-embeddings", "export decoder label embeddings");
  cmd_ex->add_option("--model", ex.model_path)->capture_default_str();
  cmd_ex->add_option("--data", ex.data_dir)->capture_default_str();
  cmd_ex->add_option("--label", ex.labels, "labels to export (default: all train labels)");
  cmd_ex->add_option("--out", ex.out_path)->capture_default_str();

  // ---- sweep
  pipeline::SweepConfig sw;
  std::vector<std::string> sw_seeds{"1", "2", "3"};
  auto* cmd_sw = app.add_subcommand("sweep", "run an ablation grid");
  cmd_sw->add_option("--out", sw.out_dir)->capture_default_str();
  cmd_sw->add_option("--docs", sw.synth.n_docs)->capture_default_str();
  cmd_sw->add_option("--labels", sw.synth.n_labels)->capture_default_str();
  cmd_sw->add_option("--clusters", sw.synth.n_clusters)->capture_default_str();
  cmd_sw->add_option("--vocab", sw.synth.vocab_size)->capture_default_str();
  cmd_sw->add_option("--min-labels", sw.synth.labels_per_doc_min)->capture_default_str();
  cmd_sw->add_option("--max-labels", sw.synth.labels_per_doc_max)->capture_default_str();
  cmd_sw->add_option("--unseen", sw.synth.unseen_label_count)->capture_default_str();
  cmd_sw->add_option("--data-seed", sw.synth.seed)->capture_default_str();
  cmd_sw->add_option("--modes", sw.modes)->delimiter(',')->capture_default_str();
  cmd_sw->add_option("--k-list", sw.k_list)->delimiter(',')->capture_default_str();
  cmd_sw->add_option("--seeds", sw_seeds)->delimiter(',')->capture_default_str();
  cmd_sw->add_option("--orders", sw.orders)->delimiter(',')->capture_default_str();
  cmd_sw->add_option("--strategies", sw.strategies)->delimiter(',')->capture_default_str();
  cmd_sw->add_option("--pu-rates", sw.pu_rates)->delimiter(',');
  cmd_sw->add_option("--d-model", sw.model.d_model)->capture_default_str();
  cmd_sw->add_option("--layers", sw.model.n_layers)->capture_default_str();
  cmd_sw->add_option("--heads", sw.model.n_heads)->capture_default_str();
  cmd_sw->add_option("--ff", sw.model.ff_dim)->capture_default_str();
  cmd_sw->add_option("--max-input", sw.model.max_input_len)->capture_default_str();
  cmd_sw->add_option("--max-output", sw.model.max_output_len)->capture_default_str();
  cmd_sw->add_option("--epochs", sw.train.epochs)->capture_default_str();
  cmd_sw->add_option("--lr", sw.train.lr)->capture_default_str();
  cmd_sw->add_option("--batch-size", sw.train.batch_size)->capture_default_str();
  cmd_sw->add_flag("--force", sw.force);

  CLI11_PARSE(app, argc, argv);

  if (show_config) {
    std::cout << app.config_to_str(true, true);
    return 0;
  }

  try {
    if (cmd_gen->parsed()) {
      pipeline::cmd_gen_data(gen);
      std::cout << "wrote " << gen.out_dir << "/{train,valid,test}.tsv and planted.json\n";
    } else if (cmd_clu->parsed()) {
      pipeline::cmd_cluster(clu);
      std::cout << "wrote " << clu.out_path << "\n";
    } else if (cmd_tr->parsed()) {
      tr.model.mode = parse_mode(tr_mode);
      const auto order = parse_label_order(tr_order);
      if (!order) throw std::invalid_argument("unknown label order: " + tr_order);
      tr.train.order_mode = *order;
      tr.model.tie_embeddings = !tr_untie;
      if (tr_pooling == "max") tr.model.bcl_pooling = Pooling::max;
      else if (tr_pooling != "mean") throw std::invalid_argument("unknown pooling: " + tr_pooling);
      if (tr_cseq == "freq") tr.train.cluster_seq_order = ClusterSeqOrder::by_frequency;
      else if (tr_cseq != "asc") throw std::invalid_argument("unknown cluster-seq: " + tr_cseq);
      if (tr.model.mode != Mode::base) tr.model.k_clusters = 1;  // set from the cluster model
      pipeline::cmd_train(tr);
      std::cout << "wrote " << tr.out_model << " and " << tr.out_log << "\n";
    } else if (cmd_pr->parsed()) {
      pipeline::cmd_predict(pr);
      std::cout << "wrote " << pr.out_path << "\n";
    } else if (cmd_ev->parsed()) {
      if (ev_stats) {
        const auto st = pipeline::data_stats(ev.data_dir);
        nlohmann::json j;
        j["n_train"] = st.n_train;
        j["n_valid"] = st.n_valid;
        j["n_test"] = st.n_test;
        j["n_train_labels"] = st.n_train_labels;
        j["zero_bucket"] = st.zero_bucket;
        j["one_bucket"] = st.one_bucket;
        std::cout << j.dump(2) << "\n";
      } else {
        const auto report = pipeline::cmd_eval(ev);
        std::cout << "micro_f1=" << report.micro << " macro_f1=" << report.macro << "\n"
                  << "wrote " << ev.out_report << " and " << ev.out_table << "\n";
      }
    } else if (cmd_ex->parsed()) {
      const auto n = pipeline::cmd_export_embeddings(ex);
      std::cout << "wrote " << n << " embeddings to " << ex.out_path << "\n";
    } else if (cmd_sw->parsed()) {
      sw.seeds = parse_u64_list(sw_seeds);
      const auto result = pipeline::cmd_sweep(sw);
      std::cout << "wrote " << result.rows.size() << " rows to " << sw.out_dir
                << "/sweep_results.json\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
