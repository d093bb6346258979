#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "msacnn/trainer.hpp"

using namespace msacnn;

TEST_CASE("adam first step approximates -lr * sign(g)", "[trainer]") {
    std::vector<double> theta = {1.0, -2.0, 0.5};
    std::vector<double> g = {0.3, -4.0, 1e-3};
    std::vector<double> m(3, 0.0), v(3, 0.0);
    adam_step(theta, g, m, v, 1, 0.01, 0.0);
    CHECK(theta[0] == Catch::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
    CHECK(theta[1] == Catch::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-12));
    CHECK(theta[2] == Catch::Approx(0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-9));
}

TEST_CASE("adam leaves parameters untouched for zero gradients", "[trainer]") {
    std::vector<double> theta = {1.0, -2.0};
    std::vector<double> g = {0.0, 0.0};
    std::vector<double> m(2, 0.0), v(2, 0.0);
    adam_step(theta, g, m, v, 1, 0.1, 0.0);
    CHECK(theta == std::vector<double>{1.0, -2.0});
}

TEST_CASE("adam matches a hand-rolled recurrence over three steps", "[trainer]") {
    const double lr = 0.05, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double grads[3] = {0.7, -0.2, 0.05};

    double theta = 0.3;
    std::vector<double> tv = {theta}, m = {0.0}, v = {0.0};

    // independent recurrence of the update equations
    double om = 0.0, ov = 0.0, otheta = 0.3;
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1] + wd * otheta;
        om = b1 * om + (1 - b1) * g;
        ov = b2 * ov + (1 - b2) * g * g;
        const double mh = om / (1 - std::pow(b1, t));
        const double vh = ov / (1 - std::pow(b2, t));
        otheta -= lr * mh / (std::sqrt(vh) + eps);

        std::vector<double> gv = {grads[t - 1]};
        adam_step(tv, gv, m, v, t, lr, wd, b1, b2, eps);
        CHECK(tv[0] == Catch::Approx(otheta).margin(1e-12));
    }
}

TEST_CASE("published learning-rate policy", "[trainer]") {
    TrainConfig small = TrainConfig::defaults_for(
        ModelConfig::make(ModelSize::small, ModelMode::multivariate, 4));
    CHECK(small.base_lr == 1e-3);
    CHECK(small.effective_head_lr() == 1e-3);

    TrainConfig large_uni = TrainConfig::defaults_for(
        ModelConfig::make(ModelSize::large, ModelMode::univariate, 1));
    CHECK(large_uni.base_lr == 1e-4);
    CHECK(large_uni.effective_head_lr() == 1e-4);

    TrainConfig large_multi = TrainConfig::defaults_for(
        ModelConfig::make(ModelSize::large, ModelMode::multivariate, 4));
    CHECK(large_multi.base_lr == 1e-4);
    CHECK(large_multi.effective_head_lr() == 1e-3);

    TrainConfig large_mm = TrainConfig::defaults_for(
        ModelConfig::make(ModelSize::large, ModelMode::multimodal, 4));
    CHECK(large_mm.effective_head_lr() == 1e-3);

    CHECK(small.epochs == 100);
    CHECK(small.weight_decay == 1e-4);
    CHECK(small.dropout == 0.1);
}

TEST_CASE("untrained loss sits at chance level", "[trainer]") {
    // lr = 0 keeps the model at initialization, so the first-epoch mean loss
    // is the chance-level cross entropy
    EpochSet set = generate_synthetic(3, 2, 15, 2, 16.0);
    ModelConfig cfg = ModelConfig::make(ModelSize::small, ModelMode::multivariate, 2);
    MsaCnnModel model = MsaCnnModel::build(cfg, 1);
    TrainConfig tc;
    tc.epochs = 1;
    tc.base_lr = 0.0;
    tc.head_lr = 0.0;
    tc.weight_decay = 0.0;
    tc.batch_size = 8;
    tc.seed = 5;
    TrainHistory h = train(model, set, tc);
    CHECK(h.mean_loss[0] == Catch::Approx(std::log(5.0)).margin(0.2));
}

TEST_CASE("lr = 0 leaves parameters bit-identical", "[trainer]") {
    EpochSet set = generate_synthetic(4, 2, 6, 2, 16.0);
    ModelConfig cfg = ModelConfig::make(ModelSize::small, ModelMode::multivariate, 2);
    MsaCnnModel model = MsaCnnModel::build(cfg, 2);
    const std::string before = model.parameter_hash();
    TrainConfig tc;
    tc.epochs = 2;
    tc.base_lr = 0.0;
    tc.head_lr = 0.0;
    tc.batch_size = 4;
    tc.seed = 3;
    train(model, set, tc);
    CHECK(model.parameter_hash() == before);
}

TEST_CASE("identical seeds give bit-identical trained parameters", "[trainer]") {
    EpochSet set = generate_synthetic(6, 2, 8, 2, 16.0);
    ModelConfig cfg = ModelConfig::make(ModelSize::small, ModelMode::multivariate, 2);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 11;

    MsaCnnModel a = MsaCnnModel::build(cfg, 7);
    TrainHistory ha = train(a, set, tc);
    MsaCnnModel b = MsaCnnModel::build(cfg, 7);
    TrainHistory hb = train(b, set, tc);
    CHECK(a.parameter_hash() == b.parameter_hash());
    CHECK(ha.mean_loss == hb.mean_loss);
    CHECK(ha.train_accuracy == hb.train_accuracy);

    tc.seed = 12;
    MsaCnnModel c = MsaCnnModel::build(cfg, 7);
    train(c, set, tc);
    CHECK(a.parameter_hash() != c.parameter_hash());
}

TEST_CASE("smoothed training loss is non-increasing early on", "[trainer][slow]") {
    EpochSet set = generate_synthetic(8, 3, 10, 2, 16.0);
    ModelConfig cfg = ModelConfig::make(ModelSize::small, ModelMode::multivariate, 2);
    MsaCnnModel model = MsaCnnModel::build(cfg, 4);
    TrainConfig tc = TrainConfig::defaults_for(cfg);
    tc.epochs = 20;
    tc.batch_size = 8;
    tc.seed = 9;
    TrainHistory h = train(model, set, tc);
    REQUIRE(h.mean_loss.size() == 20);

    // 5-epoch moving average, at most one increase allowed
    std::vector<double> smooth;
    for (std::size_t e = 0; e + 5 <= h.mean_loss.size(); ++e) {
        double s = 0.0;
        for (std::size_t i = e; i < e + 5; ++i) s += h.mean_loss[i];
        smooth.push_back(s / 5.0);
    }
    int violations = 0;
    for (std::size_t i = 1; i < smooth.size(); ++i)
        if (smooth[i] > smooth[i - 1] + 1e-12) ++violations;
    CHECK(violations <= 1);
    // and the model actually learned something
    CHECK(h.mean_loss.back() < h.mean_loss.front());
}

TEST_CASE("history serializes to the documented CSV", "[trainer]") {
    TrainHistory h;
    h.mean_loss = {1.5, 1.25};
    h.train_accuracy = {0.25, 0.5};
    const std::string csv = h.csv();
    CHECK(csv == "epoch,mean_loss,train_accuracy\n1,1.5,0.25\n2,1.25,0.5\n");
}

TEST_CASE("training rejects unusable inputs", "[trainer]") {
    ModelConfig cfg = ModelConfig::make(ModelSize::small, ModelMode::multivariate, 2);
    MsaCnnModel model = MsaCnnModel::build(cfg, 1);
    EpochSet empty;
    TrainConfig tc;
    CHECK_THROWS_AS(train(model, empty, tc), UsageError);

    EpochSet wrong = generate_synthetic(3, 2, 4, 3, 16.0);
    CHECK_THROWS_AS(train(model, wrong, tc), DataError);
}
