#include <cmath>
#include <sstream>

#include "doctest.h"

#include "cqifb/errors.hpp"
#include "cqifb/nn.hpp"

using namespace cqifb;
using namespace cqifb::nn;

namespace {

std::pair<double, Eigen::MatrixXd> half_sq(const Eigen::MatrixXd& out) {
    // Fixed target so the loss is not symmetric in the output.
    Eigen::MatrixXd t = Eigen::MatrixXd::Constant(out.rows(), out.cols(), 0.3);
    const Eigen::MatrixXd d = out - t;
    return {0.5 * d.squaredNorm(), d};
}

Eigen::MatrixXd random_batch(int rows, int cols, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd x(rows, cols);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    return x;
}

}  // namespace

TEST_CASE("layer chain validation") {
    CHECK_NOTHROW(NetworkD({LayerSpec::dense(3, 4), LayerSpec::sigmoid(4)}));
    CHECK_THROWS_AS(NetworkD({LayerSpec::dense(3, 4), LayerSpec::sigmoid(5)}), ConfigError);
    CHECK_THROWS_AS(NetworkD({LayerSpec::dropout(3, 1.0)}), ConfigError);
    CHECK_THROWS_AS(NetworkD({LayerSpec::quantize(3, 0)}), ConfigError);
    CHECK_THROWS_AS(NetworkD({LayerSpec::dense(3, 4), LayerSpec::dense(4, 4)}, Shortcut{0, 1}), ConfigError);
}

TEST_CASE("forward basics") {
    NetworkD net({LayerSpec::dense(3, 3), LayerSpec::dropout(3, 0.5)});
    net.params()[0] = Eigen::MatrixXd::Identity(3, 3);
    net.params()[1] = Eigen::MatrixXd::Zero(3, 1);
    const auto x = random_batch(3, 5, 1);
    CHECK((net.predict(x) - x).norm() == 0.0);

    NetworkD sig({LayerSpec::sigmoid(1)});
    CHECK(sig.predict(Eigen::MatrixXd::Zero(1, 1))(0, 0) == 0.5);

    NetworkD lrelu({LayerSpec::leaky_relu(2)});
    Eigen::MatrixXd v(2, 1);
    v << -2.0, 3.0;
    const auto y = lrelu.predict(v);
    CHECK(y(0, 0) == doctest::Approx(-0.02));
    CHECK(y(1, 0) == 3.0);
}

TEST_CASE("quantizer") {
    CHECK(quantize_value(0.3, 2) == 0.375);
    CHECK(quantize_value(0.0, 2) == 0.125);
    CHECK(quantize_value(1.0, 2) == 0.875);
    CHECK(quantize_value(0.5, 1) == 0.75);
    for (double x = 0.0; x <= 1.0; x += 0.001) {
        const double q = quantize_value(x, 3);
        const double m = q * 8 - 0.5;
        CHECK(m == std::round(m));
        CHECK(m >= 0);
        CHECK(m <= 7);
    }
}

TEST_CASE("quantize layer passes gradients straight through") {
    NetworkD net({LayerSpec::quantize(4, 2)});
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(4, 3, 0.3);
    NetworkD::Cache cache;
    const auto out = net.forward(x, Mode::train, nullptr, &cache);
    CHECK(out(0, 0) == 0.375);
    const auto g = random_batch(4, 3, 2);
    CHECK((net.backward(cache, g).input - g).norm() == 0.0);
}

TEST_CASE("dropout is inverted and eval-transparent") {
    NetworkD net({LayerSpec::dropout(1000, 0.25)});
    const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(1000, 1);
    Rng rng(3);
    const auto y = net.forward(x, Mode::train, &rng);
    int zeros = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y(i) == 0.0) ++zeros;
        else CHECK(y(i) == doctest::Approx(1.0 / 0.75));
    }
    CHECK(zeros > 180);
    CHECK(zeros < 320);
    CHECK((net.predict(x) - x).norm() == 0.0);
}

TEST_CASE("single dense layer gradient against closed form") {
    NetworkD net({LayerSpec::dense(3, 2)});
    Rng rng(5);
    net.initialize(rng);
    const auto x = random_batch(3, 4, 6);
    NetworkD::Cache cache;
    const auto out = net.forward(x, Mode::train, nullptr, &cache);
    const auto [l, g] = half_sq(out);
    const auto grads = net.backward(cache, g);
    const Eigen::MatrixXd dW = g * x.transpose();
    const Eigen::MatrixXd db = g.rowwise().sum();
    CHECK((grads.params[0] - dW).norm() < 1e-12);
    CHECK((grads.params[1] - db).norm() < 1e-12);
    CHECK((grads.input - net.params()[0].transpose() * g).norm() < 1e-12);

    const auto report = gradient_check(net, half_sq, x, 1e-4, 100, 1);
    CHECK(report.passed);
    CHECK(report.checked == 8);
}

TEST_CASE("finite differences on a full stack") {
    NetworkD net({LayerSpec::dense(6, 5), LayerSpec::batchnorm(5), LayerSpec::leaky_relu(5),
                  LayerSpec::dropout(5, 0.2), LayerSpec::dense(5, 4), LayerSpec::batchnorm(4),
                  LayerSpec::sigmoid(4), LayerSpec::quantize(4, 2), LayerSpec::dense(4, 4),
                  LayerSpec::sigmoid(4)},
                 Shortcut{8, 8});
    Rng rng(8);
    net.initialize(rng);
    const auto x = random_batch(6, 7, 9);
    const auto report = gradient_check(net, half_sq, x, 1e-4, 1000, 4);
    CHECK(report.passed);
    CHECK(report.max_relative_error < 1e-4);
    CHECK(report.checked == net.parameter_count());
}

TEST_CASE("gradient check edge cases") {
    NetworkD empty({LayerSpec::sigmoid(3), LayerSpec::quantize(3, 2)});
    const auto r = gradient_check(empty, half_sq, random_batch(3, 2, 1), 1e-4, 10, 1);
    CHECK(r.checked == 0);
    CHECK(r.passed);

    NetworkD q({LayerSpec::dense(3, 3), LayerSpec::quantize(3, 2)});
    CHECK(q.without_quantize().layers().size() == 1);
}

TEST_CASE("gradient check skips probes that straddle a kink") {
    NetworkD net({LayerSpec::dense(1, 1), LayerSpec::leaky_relu(1)});
    net.params()[0](0, 0) = 1e-7;
    net.params()[1](0, 0) = 0.0;
    const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(1, 1);
    const auto r = gradient_check(net, half_sq, x, 1e-4, 10, 1);
    CHECK(r.skipped == 2);
    CHECK(r.checked == 0);

    net.params()[1](0, 0) = 0.5;
    const auto smooth = gradient_check(net, half_sq, x, 1e-4, 10, 1);
    CHECK(smooth.skipped == 0);
    CHECK(smooth.checked == 2);
    CHECK(smooth.passed);
}

TEST_CASE("batchnorm on a constant batch has a finite gradient") {
    NetworkD net({LayerSpec::batchnorm(3)});
    Rng rng(1);
    net.initialize(rng);
    NetworkD::Cache cache;
    const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(3, 4, 2.0);
    net.forward(x, Mode::train, nullptr, &cache);
    const auto g = net.backward(cache, random_batch(3, 4, 2));
    CHECK(g.input.allFinite());
}

TEST_CASE("batchnorm running statistics") {
    NetworkD net({LayerSpec::batchnorm(1)});
    Rng rng(1);
    net.initialize(rng);
    Eigen::MatrixXd x(1, 4);
    x << 1, 2, 3, 4;
    net.forward(x, Mode::train);
    CHECK(net.running_mean()[0](0) == doctest::Approx(0.1 * 2.5));
    CHECK(net.running_var()[0](0) == doctest::Approx(0.9 + 0.1 * (5.0 / 3.0)));
    const Eigen::MatrixXd before = net.running_mean()[0];
    net.predict(x);
    CHECK(net.running_mean()[0] == before);
}

TEST_CASE("loss") {
    Eigen::MatrixXd p(2, 1), t(2, 1);
    p << 5, 3;
    t << 4, 4;
    const auto r = loss_cqinet<double>(p, t, 0.05);
    CHECK(r.mse == 1.0);
    CHECK(r.overestimate == 0.5);
    CHECK(r.loss == doctest::Approx(0.975));
    CHECK(r.grad(0, 0) == doctest::Approx(0.95 * 2 * 1 / 2.0 + 0.05 / 2.0));
    CHECK(r.grad(1, 0) == doctest::Approx(0.95 * 2 * -1 / 2.0));
    CHECK(loss_cqinet<double>(t, t, 0.05).loss == 0.0);
    CHECK(loss_cqinet<double>(p, t, 0.0).loss == r.mse);
    CHECK_THROWS_AS(loss_cqinet<double>(p, Eigen::MatrixXd(1, 1), 0.05), ConfigError);
}

TEST_CASE("adam") {
    NetworkD net({LayerSpec::dense(2, 2)});
    Rng rng(1);
    net.initialize(rng);
    const auto before = net.params();
    TrainConfig cfg;
    AdamState<double> st;
    std::vector<Eigen::MatrixXd> zero{Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 1)};
    adam_step(net, zero, st, cfg);
    CHECK(net.params()[0] == before[0]);

    std::vector<Eigen::MatrixXd> g{Eigen::MatrixXd::Constant(2, 2, 50.0), Eigen::MatrixXd::Constant(2, 1, -50.0)};
    AdamState<double> st2;
    adam_step(net, g, st2, cfg);
    CHECK(net.params()[0](0, 0) - before[0](0, 0) == doctest::Approx(-cfg.learning_rate).epsilon(1e-6));
    CHECK(net.params()[1](0, 0) - before[1](0, 0) == doctest::Approx(cfg.learning_rate).epsilon(1e-6));
}

TEST_CASE("training steps are deterministic") {
    auto run = [] {
        NetworkF net({LayerSpec::dense(4, 3), LayerSpec::batchnorm(3), LayerSpec::dropout(3, 0.3),
                      LayerSpec::dense(3, 2)});
        Rng rng(2);
        net.initialize(rng);
        AdamState<float> st;
        TrainConfig cfg;
        Rng drop(3);
        const NetworkF::Matrix x = random_batch(4, 6, 4).cast<float>();
        const NetworkF::Matrix t = NetworkF::Matrix::Ones(2, 6);
        for (int i = 0; i < 20; ++i) {
            NetworkF::Cache cache;
            const auto out = net.forward(x, Mode::train, &drop, &cache);
            adam_step(net, net.backward(cache, loss_cqinet<float>(out, t, 0.05).grad).params, st, cfg);
        }
        return net.params();
    };
    const auto a = run();
    const auto b = run();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("model file round trip") {
    NetworkF net({LayerSpec::dense(3, 4), LayerSpec::batchnorm(4), LayerSpec::leaky_relu(4),
                  LayerSpec::dense(4, 4), LayerSpec::sigmoid(4), LayerSpec::quantize(4, 3)},
                 Shortcut{3, 3});
    Rng rng(1);
    net.initialize(rng);
    net.running_mean()[0].setConstant(0.25f);
    std::stringstream buf;
    write_model(buf, net);
    const auto back = read_model(buf);
    CHECK(back.layers() == net.layers());
    CHECK(back.shortcut() == net.shortcut());
    for (std::size_t i = 0; i < net.params().size(); ++i) CHECK(back.params()[i] == net.params()[i]);
    CHECK(back.running_mean()[0] == net.running_mean()[0]);
    const auto x = random_batch(3, 2, 1).cast<float>();
    CHECK(back.predict(x) == net.predict(x));

    std::string bytes;
    {
        std::stringstream again;
        write_model(again, net);
        bytes = again.str();
    }
    bytes[0] = 'X';
    std::stringstream bad(bytes);
    CHECK_THROWS_AS(read_model(bad), FormatError);
    std::stringstream truncated(bytes.substr(0, bytes.size() / 2).replace(0, 1, "C"));
    CHECK_THROWS_AS(read_model(truncated), FormatError);
    CHECK_THROWS_AS(load_model("/nonexistent/m.cqnn"), MissingFileError);
}
