from flask import Flask, jsonify, Response, request
import os
import subprocess
import sys

import config  # type: ignore

from scripts.blind_delegation.circuit_ir import CapabilityProfile
from scripts.blind_delegation.errors import DelegationError
from scripts.blind_delegation.protocol_engine import PROTOCOLS, run_protocol, sample_outcomes
from scripts.blind_delegation.scenarios import SCENARIOS, build_scenario
from scripts.blind_delegation.sim_core import RngStreams, basis_probabilities, fidelity_up_to_global_phase
from scripts.blind_delegation.verification import (
    gate_nondetection_probability,
    log10_nondetection_probability,
    nondetection_probability,
)

app = Flask(__name__)

# Cap shots for in-process runs; larger jobs go through the streamed runner
MAX_API_SHOTS = 20000


# Add CORS headers
@app.after_request
def after_request(response):
    response.headers.add('Access-Control-Allow-Origin', '*')
    response.headers.add('Access-Control-Allow-Headers', 'Content-Type,Authorization')
    response.headers.add('Access-Control-Allow-Methods', 'GET,POST,OPTIONS')
    return response


# Runner scripts are the .py files in the scripts folder
def get_tools():
    scripts_dir = os.path.join(os.path.dirname(__file__), 'scripts')
    return sorted(f[:-3] for f in os.listdir(scripts_dir)
                  if f.endswith('.py') and f != '__init__.py')


def error_response(e):
    status = 400 if isinstance(e, (DelegationError, ValueError, TypeError, KeyError)) else 500
    message = str(e)
    if len(message) > 200:
        message = message[:200] + "..."
    print(f"💥 {type(e).__name__}: {message}", flush=True)
    return jsonify({'success': False, 'error': message}), status


@app.route('/')
def index():
    return jsonify({
        'service': 'blind-delegation-simulator',
        'protocols': list(PROTOCOLS),
        'scenarios': sorted(SCENARIOS),
        'tools': get_tools(),
    })


@app.route('/api/tools')
def api_tools():
    return jsonify(get_tools())


@app.route('/api/scenarios')
def api_scenarios():
    return jsonify({name: build_scenario(name).to_json() for name in sorted(SCENARIOS)})


@app.route('/api/nondetection')
def api_nondetection():
    """Analytic non-detection bound for N original qubits, N' verifier qubits and n shots"""
    try:
        n_original = int(request.args['N'])
        n_verifier = int(request.args['Nprime'])
        shots = int(request.args['n'])
        result = {
            'success': True,
            'N': n_original,
            'Nprime': n_verifier,
            'n': shots,
            'nondetection': nondetection_probability(n_original, n_verifier, shots),
            'log10_nondetection': log10_nondetection_probability(n_original, n_verifier, shots),
        }
        if 'gates' in request.args and 'verifier_gates' in request.args:
            result['gate_nondetection'] = gate_nondetection_probability(
                int(request.args['gates']), int(request.args['verifier_gates']), shots)
        return jsonify(result)
    except Exception as e:
        return error_response(e)


@app.route('/api/run', methods=['POST'])
def api_run():
    """Run a built-in scenario in-process and report fidelity, summary and distribution"""
    try:
        data = request.get_json(silent=True) or {}
        scenario = data.get('scenario', 'grover3')
        protocol = data.get('protocol', 'p2')
        seed = int(data.get('seed', config.SEED))
        shots = int(data.get('shots', 0))
        capacity = int(data.get('M', 2))
        if not 0 <= shots <= MAX_API_SHOTS:
            return jsonify({'success': False, 'error': f'shots must be between 0 and {MAX_API_SHOTS}'}), 400

        circuit = build_scenario(scenario, data.get('angles'))
        options = {'key_mode': data.get('key_mode', config.KEY_MODE)}
        if protocol == 'p2':
            profile = CapabilityProfile.full(capacity)
        else:
            profile = CapabilityProfile.one_qubit_gates(capacity) if protocol == 'p3' else None
            options['trap_density'] = float(data.get('trap_density', config.TRAP_DENSITY))

        print(f"🚀 API run: {scenario} via {protocol} (M={capacity}, seed={seed}, shots={shots})", flush=True)
        reference_state = circuit.simulate()
        result = run_protocol(protocol, circuit, profile, RngStreams(seed), measure=False, **options)
        payload = {
            'success': True,
            'scenario': scenario,
            'protocol': protocol,
            'fidelity': fidelity_up_to_global_phase(result.state, reference_state),
            'summary': result.summary,
            'reference': {k: v for k, v in basis_probabilities(reference_state).items() if v > 1e-12},
        }
        if shots:
            counts = sample_outcomes(protocol, circuit, profile, seed, shots, **options)
            payload['counts'] = dict(sorted(counts.items()))
        return jsonify(payload)
    except Exception as e:
        return error_response(e)


# Server-Sent Events (SSE) route to run scripts and stream output
@app.route('/run/<tool_name>')
def run_tool(tool_name):
    scripts_dir = os.path.join(os.path.dirname(__file__), 'scripts')

    # Find the exact script file (case-insensitive)
    script_file = None
    for file in os.listdir(scripts_dir):
        if file.lower() == f'{tool_name}.py'.lower() and file != '__init__.py':
            script_file = file
            break

    if not script_file:
        return Response(f"data: Script '{tool_name}' not found.\n\n", mimetype='text/event-stream')

    base_dir = os.path.dirname(__file__)
    script_path = os.path.join(base_dir, 'scripts', script_file)
    python_exec = sys.executable or 'python'
    cmd = [python_exec, '-u', script_path]  # -u flag for unbuffered output

    # First positional: subcommand, then scenario; every other query parameter becomes a flag
    args = request.args.to_dict()
    command = args.pop('command', 'run')
    cmd.append(command)
    if command == 'run':
        cmd.append(args.pop('scenario', 'grover3'))
    for key, value in args.items():
        flag = '--' + key.replace('_', '-')
        if value in ('', 'true', 'on'):
            cmd.append(flag)
        else:
            cmd.extend([flag] + value.split() if key == 'n' else [flag, value])

    def generate():
        try:
            process = subprocess.Popen(
                cmd,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                text=True,
                bufsize=0,
                encoding='utf-8',
                errors='replace',
                cwd=base_dir
            )

            yield f"data: Starting {tool_name} script...\n\n"

            # Read output in real-time
            while True:
                output = process.stdout.readline()
                if output == '' and process.poll() is not None:
                    break
                cleaned_output = output.strip()
                if cleaned_output:
                    yield f"data: {cleaned_output}\n\n"

            return_code = process.wait()
            if return_code == 0:
                yield f"data: Script completed successfully with exit code {return_code}\n\n"
            else:
                yield f"data: Script completed with exit code {return_code}\n\n"

        except Exception as e:
            yield f"data: Error running script: {str(e)}\n\n"
        finally:
            yield "data: [DONE]\n\n"

    response = Response(generate(), mimetype='text/event-stream')
    response.headers['Content-Type'] = 'text/event-stream; charset=utf-8'
    return response


if __name__ == '__main__':
    port = int(os.environ.get('PORT', 5000))
    app.run(host='0.0.0.0', port=port, debug=False)
