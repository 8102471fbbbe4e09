from setuptools import setup, find_packages

package_name = 'eps-tail-sampler'

setup(
    name=package_name,
    version='0.1.0',
    packages=find_packages(exclude=['test']),
    py_modules=['tail_sampler'],
    data_files=[
        ('share/' + package_name, ['config_default.json', 'config_schema.json']),
    ],
    install_requires=['setuptools', 'numpy>=1.21'],
    zip_safe=True,
    maintainer='user',
    maintainer_email='user@example.com',
    description='Tail-based trace sampler using execution path similarity and two-layer budget allocation.',
    license='TODO',
    tests_require=['pytest'],
    entry_points={
        'console_scripts': [
            'tail-sampler = tail_sampler:main',
        ],
    },
)
