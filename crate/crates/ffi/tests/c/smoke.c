#include <math.h>
#include <stdio.h>
#include "fedsgm.h"

#define CHECK(call)                                                            \
  do {                                                                         \
    FedsgmStatus s_ = (call);                                                  \
    if (s_ != FEDSGM_STATUS_OK) {                                              \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, fedsgm_last_error());  \
      return 1;                                                                \
    }                                                                          \
  } while (0)

int main(void) {
  double c[2] = {1.0, 1.0};
  FedsgmLinearBallParams params = {c, 2, 1.0, 2.0, 4, 0.1, 3};
  FedsgmProblem *problem = NULL;
  CHECK(fedsgm_problem_linear_ball(&params, &problem));

  FedsgmProblemInfo info;
  CHECK(fedsgm_problem_info(problem, &info));

  FedsgmRunConfig cfg = {0};
  cfg.rounds = 200;
  cfg.local_steps = 2;
  cfg.participants = 4;
  cfg.eta = 0.01;
  cfg.epsilon = 0.1;
  cfg.compress = true;
  cfg.uplink.kind = FEDSGM_COMPRESSOR_KIND_TOP_K;
  cfg.uplink.param = 1;
  cfg.downlink.kind = FEDSGM_COMPRESSOR_KIND_IDENTITY;
  cfg.seed = 9;
  cfg.workers = 1;

  FedsgmTrace *trace = NULL;
  CHECK(fedsgm_run(problem, &cfg, &trace));
  FedsgmRoundRecord last;
  CHECK(fedsgm_trace_record(trace, fedsgm_trace_len(trace) - 1, &last));
  double w[2];
  CHECK(fedsgm_trace_final_model(trace, w, 2));

  if (fedsgm_trace_record(trace, 100000, &last) != FEDSGM_STATUS_OUT_OF_RANGE || fedsgm_last_error() == NULL) {
    fprintf(stderr, "out-of-range record not reported\n");
    return 1;
  }
  if (fabs(fedsgm_gamma_full(3, 1.0, 1.0) - 18.0) > 1e-12) {
    fprintf(stderr, "gamma_full mismatch\n");
    return 1;
  }
  printf("dim=%zu rounds=%zu f=%.4f g=%.4f w=(%.4f, %.4f)\n", info.dim, fedsgm_trace_len(trace), last.f_true,
         last.g_true, w[0], w[1]);
  fedsgm_trace_free(trace);
  fedsgm_problem_free(problem);
  return 0;
}
